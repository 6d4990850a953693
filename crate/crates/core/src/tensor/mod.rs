//! Dense 64-bit float tensors and a tape-based reverse-mode gradient kernel.
//!
//! Everything upstream (node memory, trajectory encodings, attention
//! embeddings, task heads) is expressed through the primitives in
//! [`tape::Tape`], so a single backward pass covers the whole model. The
//! op set is deliberately small: dense matmul, broadcast add, elementwise
//! nonlinearities, last-axis concat/slice/softmax, and the scalar decay
//! ops the trajectory encoder needs. All storage is row-major `f64`.

pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod tape;

use thiserror::Error;

/// Errors raised by tensor construction and tape primitives.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("shape {shape:?} expects {expected} values, got {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` is already defined")]
    DuplicateParameter(String),
}

/// A dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(TensorError::LengthMismatch {
                expected,
                got: values.len(),
                shape,
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![v],
        }
    }

    /// A `[1, n]` row vector, the layout model code uses for node states.
    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: vec![1, values.len()],
            values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// Single stored value; panics if the tensor is not one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.values.len(), 1, "item() on non-scalar tensor");
        self.values[0]
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l2_distance(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "l2_distance shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { .. }));
    }

    #[test]
    fn row_layout() {
        let t = Tensor::row(vec![1.0, 2.0, 3.0]);
        assert_eq!(t.shape(), &[1, 3]);
        assert_eq!(t.numel(), 3);
    }

    #[test]
    fn scalar_item() {
        assert_eq!(Tensor::scalar(4.5).item(), 4.5);
    }
}
