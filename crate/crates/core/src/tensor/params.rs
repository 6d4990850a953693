//! Named parameter storage with per-entry Adam state.
//!
//! Entries live in a `BTreeMap` so every iteration (updates, serialization,
//! initialization draws) happens in one deterministic name order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::{Tensor, TensorError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One learnable tensor plus its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(shape.clone()),
            m: Tensor::zeros(shape.clone()),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct ParameterSet {
    entries: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define(&mut self, name: &str, value: Tensor) -> Result<(), TensorError> {
        if self.entries.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        self.entries.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    /// Defines a weight matrix drawn uniformly from
    /// `±sqrt(6 / (fan_in + fan_out))`.
    pub fn define_uniform(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<(), TensorError> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        self.define(name, Tensor::new(vec![fan_in, fan_out], values)?)
    }

    pub fn get(&self, name: &str) -> Result<&Param, TensorError> {
        self.entries
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, TensorError> {
        Ok(&self.get(name)?.value)
    }

    /// Replaces a value, keeping optimizer state when the shape is unchanged
    /// and resetting it otherwise (used when loading checkpoints).
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), TensorError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            *entry = Param::new(value);
        } else {
            entry.value = value;
        }
        Ok(())
    }

    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor) -> Result<(), TensorError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        if entry.grad.shape() != delta.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "accumulate_grad",
                lhs: entry.grad.shape().to_vec(),
                rhs: delta.shape().to_vec(),
            });
        }
        for (g, d) in entry.grad.values_mut().iter_mut().zip(delta.values()) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.values_mut().fill(0.0);
        }
    }

    /// Appends rows to a rank-2 parameter, keeping existing values and
    /// moments bit-identical and zero-initializing moments of the new rows.
    pub fn append_rows(&mut self, name: &str, rows: Tensor) -> Result<(), TensorError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        let shape = entry.value.shape().to_vec();
        if shape.len() != 2 || rows.shape().len() != 2 || rows.shape()[1] != shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "append_rows",
                lhs: shape,
                rhs: rows.shape().to_vec(),
            });
        }
        let new_shape = vec![shape[0] + rows.shape()[0], shape[1]];
        let grow = |t: &Tensor, extra: &[f64]| {
            let mut vals = t.values().to_vec();
            vals.extend_from_slice(extra);
            Tensor::new(new_shape.clone(), vals).expect("append_rows shape")
        };
        let zeros = vec![0.0; rows.numel()];
        entry.grad = grow(&entry.grad, &zeros);
        entry.m = grow(&entry.m, &zeros);
        entry.v = grow(&entry.v, &zeros);
        entry.value = grow(&entry.value, rows.values());
        Ok(())
    }

    /// One Adam update over every entry, in name order; gradients are zeroed
    /// afterwards.
    pub fn adam_step(&mut self, lr: f64) {
        self.adam_step_filtered(lr, |_| true);
    }

    /// Adam over the entries whose name satisfies `keep`; all gradients are
    /// zeroed afterwards so stale accumulations never leak into later steps.
    pub fn adam_step_filtered(&mut self, lr: f64, keep: impl Fn(&str) -> bool) {
        for (name, p) in self.entries.iter_mut() {
            if !keep(name) {
                continue;
            }
            p.step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(p.step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(p.step as i32);
            for i in 0..p.value.numel() {
                let g = p.grad.values()[i];
                let m = ADAM_BETA1 * p.m.values()[i] + (1.0 - ADAM_BETA1) * g;
                let v = ADAM_BETA2 * p.v.values()[i] + (1.0 - ADAM_BETA2) * g * g;
                p.m.values_mut()[i] = m;
                p.v.values_mut()[i] = v;
                let update = lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                p.value.values_mut()[i] -= update;
            }
        }
        self.zero_grads();
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_definition_rejected() {
        let mut ps = ParameterSet::new();
        ps.define("w", Tensor::scalar(0.0)).unwrap();
        assert!(matches!(
            ps.define("w", Tensor::scalar(1.0)),
            Err(TensorError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        // With constant gradient g, bias-corrected m/sqrt(v) is sign(g), so
        // the first update moves each coordinate by almost exactly lr.
        let mut ps = ParameterSet::new();
        ps.define("w", Tensor::row(vec![0.0, 0.0])).unwrap();
        ps.accumulate_grad("w", &Tensor::row(vec![0.3, -2.0])).unwrap();
        ps.adam_step(1e-2);
        let v = ps.value("w").unwrap().values().to_vec();
        assert!((v[0] + 1e-2).abs() < 1e-6, "{v:?}");
        assert!((v[1] - 1e-2).abs() < 1e-6, "{v:?}");
        assert_eq!(ps.get("w").unwrap().grad.values(), &[0.0, 0.0]);
    }

    #[test]
    fn append_rows_preserves_existing_values_and_moments() {
        let mut ps = ParameterSet::new();
        ps.define("m", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        ps.accumulate_grad("m", &Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap())
            .unwrap();
        ps.adam_step(0.1);
        let before = ps.get("m").unwrap().clone();
        ps.append_rows("m", Tensor::new(vec![1, 2], vec![9.0, 9.0]).unwrap())
            .unwrap();
        let after = ps.get("m").unwrap();
        assert_eq!(after.value.shape(), &[3, 2]);
        assert_eq!(&after.value.values()[..4], before.value.values());
        assert_eq!(&after.m.values()[..4], before.m.values());
        assert_eq!(&after.v.values()[..4], before.v.values());
        assert_eq!(&after.value.values()[4..], &[9.0, 9.0]);
        assert_eq!(&after.m.values()[4..], &[0.0, 0.0]);
    }

    #[test]
    fn uniform_init_is_seed_deterministic_and_bounded() {
        let mut a = ChaCha12Rng::seed_from_u64(7);
        let mut b = ChaCha12Rng::seed_from_u64(7);
        let mut ps1 = ParameterSet::new();
        let mut ps2 = ParameterSet::new();
        ps1.define_uniform("w", 10, 6, &mut a).unwrap();
        ps2.define_uniform("w", 10, 6, &mut b).unwrap();
        assert_eq!(ps1.value("w").unwrap(), ps2.value("w").unwrap());
        let limit = (6.0 / 16.0f64).sqrt();
        assert!(ps1
            .value("w")
            .unwrap()
            .values()
            .iter()
            .all(|v| v.abs() < limit));
    }
}
