//! Eager forward evaluation with a recorded tape for reverse-mode gradients.
//!
//! Every primitive computes its output immediately and appends one node to
//! the tape. [`Tape::backward`] walks the recording in reverse, accumulating
//! cotangents per node and folding leaf gradients into the owning
//! [`ParameterSet`]. Accumulation order is the fixed tape order, so repeated
//! runs produce bit-identical gradients.

use super::params::ParameterSet;
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    /// Constant input; `param` names the source parameter when gradients
    /// should flow back into the store.
    Leaf { param: Option<String> },
    Matmul(Var, Var),
    /// `A @ B^T`, used for attention scores.
    MatmulTransB(Var, Var),
    /// Elementwise add; rhs may broadcast over leading axes of lhs.
    Add(Var, Var),
    Mul(Var, Var),
    ConcatLast(Vec<Var>),
    /// Vertical concatenation of rank-2 inputs with equal widths.
    StackRows(Vec<Var>),
    SliceLast { src: Var, start: usize, len: usize },
    SelectRow { src: Var, row: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Cos(Var),
    Softplus(Var),
    SoftmaxLast(Var),
    /// Softmax over unmasked positions of a `[1, n]` row; masked outputs are 0.
    MaskedSoftmax { src: Var, mask: Vec<bool> },
    Scale(Var, f64),
    /// `exp(-c * x)` elementwise with `c >= 0`.
    ExpNegScale(Var, f64),
    Sum(Var),
    Mean(Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recording of one differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { param: None }, value)
    }

    pub fn constant_row(&mut self, values: &[f64]) -> Var {
        self.constant(Tensor::row(values.to_vec()))
    }

    /// Records the named parameter's current value as a differentiable leaf.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var, TensorError> {
        let value = params.value(name)?.clone();
        Ok(self.push(
            Op::Leaf {
                param: Some(name.to_string()),
            },
            value,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, p, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(va.values(), vb.values(), &mut out, m, p, n);
        let value = Tensor::new(vec![m, n], out).expect("matmul output shape");
        Ok(self.push(Op::Matmul(a, b), value))
    }

    /// `A [m,p] @ B[n,p]^T -> [m,n]`.
    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_transb",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, p, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += va.values()[i * p + k] * vb.values()[j * p + k];
                }
                out[i * n + j] = acc;
            }
        }
        let value = Tensor::new(vec![m, n], out).expect("matmul_transb output shape");
        Ok(self.push(Op::MatmulTransB(a, b), value))
    }

    /// Elementwise add. The rhs broadcasts when its shape (after stripping
    /// leading 1s) is a suffix of the lhs shape, e.g. `[n,d] + [1,d]`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let period = broadcast_period(va.shape(), vb.shape()).ok_or_else(|| {
            TensorError::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            }
        })?;
        let mut out = va.values().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            *o += vb.values()[i % period];
        }
        let value = Tensor::new(va.shape().to_vec(), out).expect("add output shape");
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), out).expect("mul output shape");
        Ok(self.push(Op::Mul(a, b), value))
    }

    /// Concatenates along the last axis; all leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat_last",
                msg: "no inputs".into(),
            });
        }
        let lead = self.value(parts[0]).shape();
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let mut last_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            last_total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * last_total];
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            let w = *v.shape().last().unwrap();
            for r in 0..rows {
                out[r * last_total + offset..r * last_total + offset + w]
                    .copy_from_slice(&v.values()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(last_total);
        let value = Tensor::new(shape, out).expect("concat output shape");
        Ok(self.push(Op::ConcatLast(parts.to_vec()), value))
    }

    /// Stacks rank-2 inputs with matching widths along the row axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "stack_rows",
                msg: "no inputs".into(),
            });
        }
        let first = self.value(parts[0]).shape().to_vec();
        if first.len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "stack_rows",
                msg: format!("inputs must be rank 2, got {first:?}"),
            });
        }
        let d = first[1];
        let mut rows = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[1] != d {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
        }
        let mut out = Vec::with_capacity(rows * d);
        for &p in parts {
            out.extend_from_slice(self.value(p).values());
        }
        let value = Tensor::new(vec![rows, d], out).expect("stack output shape");
        Ok(self.push(Op::StackRows(parts.to_vec()), value))
    }

    /// Takes `[start, start+len)` of the last axis.
    pub fn slice_last(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let v = self.value(src);
        let s = v.shape();
        let w = *s.last().ok_or_else(|| TensorError::InvalidArgument {
            op: "slice_last",
            msg: "input must have rank >= 1".into(),
        })?;
        if start + len > w || len == 0 {
            return Err(TensorError::InvalidArgument {
                op: "slice_last",
                msg: format!("range {start}..{} out of width {w}", start + len),
            });
        }
        let rows: usize = s[..s.len() - 1].iter().product();
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&v.values()[r * w + start..r * w + start + len]);
        }
        let mut shape = s[..s.len() - 1].to_vec();
        shape.push(len);
        let value = Tensor::new(shape, out).expect("slice output shape");
        Ok(self.push(Op::SliceLast { src, start, len }, value))
    }

    /// Selects one row of a `[n, d]` matrix as a `[1, d]` tensor. The
    /// gradient scatters back into that row only.
    pub fn select_row(&mut self, src: Var, row: usize) -> Result<Var, TensorError> {
        let v = self.value(src);
        let s = v.shape();
        if s.len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "select_row",
                msg: format!("input must be rank 2, got {s:?}"),
            });
        }
        if row >= s[0] {
            return Err(TensorError::InvalidArgument {
                op: "select_row",
                msg: format!("row {row} out of {}", s[0]),
            });
        }
        let d = s[1];
        let value = Tensor::new(vec![1, d], v.values()[row * d..(row + 1) * d].to_vec())
            .expect("select_row output shape");
        Ok(self.push(Op::SelectRow { src, row }, value))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map_values(x, sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map_values(x, f64::tanh);
        self.push(Op::Tanh(x), out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map_values(x, |v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        let out = self.map_values(x, f64::cos);
        self.push(Op::Cos(x), out)
    }

    /// `ln(1 + e^x)` in the overflow-safe form `max(x, 0) + ln(1 + e^-|x|)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.map_values(x, |v| v.max(0.0) + (-v.abs()).exp().ln_1p());
        self.push(Op::Softplus(x), out)
    }

    /// Softmax over the last axis, max-subtracted per row.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let s = v.shape();
        let w = *s.last().ok_or_else(|| TensorError::InvalidArgument {
            op: "softmax_last",
            msg: "input must have rank >= 1".into(),
        })?;
        let rows = v.numel() / w;
        let mut out = v.values().to_vec();
        for r in 0..rows {
            softmax_row(&mut out[r * w..(r + 1) * w]);
        }
        let value = Tensor::new(s.to_vec(), out).expect("softmax output shape");
        Ok(self.push(Op::SoftmaxLast(x), value))
    }

    /// Softmax of a `[1, n]` score row restricted to unmasked entries
    /// (`mask[i] == true` keeps entry `i`); masked outputs are exactly 0.
    /// Masking everything is an error: callers that can reach an empty
    /// neighborhood must handle it before scoring.
    pub fn masked_softmax(&mut self, src: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let v = self.value(src);
        if v.shape().len() != 2 || v.shape()[0] != 1 || v.shape()[1] != mask.len() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                lhs: v.shape().to_vec(),
                rhs: vec![1, mask.len()],
            });
        }
        if mask.iter().all(|m| !m) {
            return Err(TensorError::InvalidArgument {
                op: "masked_softmax",
                msg: "all entries masked".into(),
            });
        }
        let vals = v.values();
        let max = vals
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0.0; vals.len()];
        let mut denom = 0.0;
        for i in 0..vals.len() {
            if mask[i] {
                out[i] = (vals[i] - max).exp();
                denom += out[i];
            }
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
        let value = Tensor::new(vec![1, mask.len()], out).expect("masked softmax shape");
        Ok(self.push(
            Op::MaskedSoftmax {
                src,
                mask: mask.to_vec(),
            },
            value,
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.map_values(x, |v| c * v);
        self.push(Op::Scale(x, c), out)
    }

    /// `exp(-c * x)` elementwise; `c` must be non-negative so the exponent
    /// stays non-positive on the non-negative inputs this op is meant for
    /// (elapsed times).
    pub fn exp_neg_scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        if !(c >= 0.0) {
            return Err(TensorError::InvalidArgument {
                op: "exp_neg_scale",
                msg: format!("decay rate must be >= 0, got {c}"),
            });
        }
        let out = self.map_values(x, |v| (-c * v).exp());
        Ok(self.push(Op::ExpNegScale(x, c), out))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.values().iter().sum::<f64>() / v.numel() as f64;
        self.push(Op::Mean(x), Tensor::scalar(m))
    }

    /// Sums a list of same-shaped vars pairwise in the given order.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var, TensorError> {
        let mut iter = vars.iter();
        let first = *iter.next().ok_or_else(|| TensorError::InvalidArgument {
            op: "add_all",
            msg: "no inputs".into(),
        })?;
        let mut acc = first;
        for &v in iter {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    fn map_values(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.values().iter().map(|&x| f(x)).collect())
            .expect("map shape")
    }

    /// Reverse pass from a scalar loss. Leaf gradients for named parameters
    /// accumulate into `params`; everything else is discarded with the tape.
    pub fn backward(&self, loss: Var, params: &mut ParameterSet) -> Result<(), TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let grad = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(name) = param {
                        params.accumulate_grad(name, &grad)?;
                    }
                }
                Op::Matmul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, p) = (va.shape()[0], va.shape()[1]);
                    let n = vb.shape()[1];
                    // dA = dC @ B^T
                    let mut da = vec![0.0; m * p];
                    for i in 0..m {
                        for k in 0..p {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grad.values()[i * n + j] * vb.values()[k * n + j];
                            }
                            da[i * p + k] = acc;
                        }
                    }
                    // dB = A^T @ dC
                    let mut db = vec![0.0; p * n];
                    for k in 0..p {
                        for i in 0..m {
                            let aik = va.values()[i * p + k];
                            for j in 0..n {
                                db[k * n + j] += aik * grad.values()[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![m, p], da).unwrap());
                    accumulate(&mut grads, *b, Tensor::new(vec![p, n], db).unwrap());
                }
                Op::MatmulTransB(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, p) = (va.shape()[0], va.shape()[1]);
                    let n = vb.shape()[0];
                    // C = A @ B^T; dA = dC @ B, dB = dC^T @ A
                    let mut da = vec![0.0; m * p];
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad.values()[i * n + j];
                            for k in 0..p {
                                da[i * p + k] += g * vb.values()[j * p + k];
                            }
                        }
                    }
                    let mut db = vec![0.0; n * p];
                    for j in 0..n {
                        for i in 0..m {
                            let g = grad.values()[i * n + j];
                            for k in 0..p {
                                db[j * p + k] += g * va.values()[i * p + k];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![m, p], da).unwrap());
                    accumulate(&mut grads, *b, Tensor::new(vec![n, p], db).unwrap());
                }
                Op::Add(a, b) => {
                    let vb = self.value(*b);
                    let period = vb.numel();
                    let mut db = vec![0.0; period];
                    for (i, g) in grad.values().iter().enumerate() {
                        db[i % period] += g;
                    }
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(
                        &mut grads,
                        *b,
                        Tensor::new(vb.shape().to_vec(), db).unwrap(),
                    );
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = grad
                        .values()
                        .iter()
                        .zip(vb.values())
                        .map(|(g, y)| g * y)
                        .collect();
                    let db: Vec<f64> = grad
                        .values()
                        .iter()
                        .zip(va.values())
                        .map(|(g, x)| g * x)
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(va.shape().to_vec(), da).unwrap());
                    accumulate(&mut grads, *b, Tensor::new(vb.shape().to_vec(), db).unwrap());
                }
                Op::ConcatLast(parts) => {
                    let total = *node.value.shape().last().unwrap();
                    let rows = node.value.numel() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let vp = self.value(p);
                        let w = *vp.shape().last().unwrap();
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w].copy_from_slice(
                                &grad.values()[r * total + offset..r * total + offset + w],
                            );
                        }
                        offset += w;
                        accumulate(&mut grads, p, Tensor::new(vp.shape().to_vec(), dp).unwrap());
                    }
                }
                Op::StackRows(parts) => {
                    let d = node.value.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let vp = self.value(p);
                        let r = vp.shape()[0];
                        let dp = grad.values()[offset * d..(offset + r) * d].to_vec();
                        offset += r;
                        accumulate(&mut grads, p, Tensor::new(vp.shape().to_vec(), dp).unwrap());
                    }
                }
                Op::SliceLast { src, start, len } => {
                    let vs = self.value(*src);
                    let w = *vs.shape().last().unwrap();
                    let rows = vs.numel() / w;
                    let mut ds = vec![0.0; vs.numel()];
                    for r in 0..rows {
                        ds[r * w + start..r * w + start + len]
                            .copy_from_slice(&grad.values()[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut grads, *src, Tensor::new(vs.shape().to_vec(), ds).unwrap());
                }
                Op::SelectRow { src, row } => {
                    let vs = self.value(*src);
                    let d = vs.shape()[1];
                    let mut ds = vec![0.0; vs.numel()];
                    ds[row * d..(row + 1) * d].copy_from_slice(grad.values());
                    accumulate(&mut grads, *src, Tensor::new(vs.shape().to_vec(), ds).unwrap());
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let dx: Vec<f64> = grad
                        .values()
                        .iter()
                        .zip(y.values())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(y.shape().to_vec(), dx).unwrap());
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let dx: Vec<f64> = grad
                        .values()
                        .iter()
                        .zip(y.values())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(y.shape().to_vec(), dx).unwrap());
                }
                Op::Relu(x) => {
                    let vx = self.value(*x);
                    let dx: Vec<f64> = grad
                        .values()
                        .iter()
                        .zip(vx.values())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(vx.shape().to_vec(), dx).unwrap());
                }
                Op::Cos(x) => {
                    let vx = self.value(*x);
                    let dx: Vec<f64> = grad
                        .values()
                        .iter()
                        .zip(vx.values())
                        .map(|(g, x)| -g * x.sin())
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(vx.shape().to_vec(), dx).unwrap());
                }
                Op::Softplus(x) => {
                    let vx = self.value(*x);
                    let dx: Vec<f64> = grad
                        .values()
                        .iter()
                        .zip(vx.values())
                        .map(|(g, x)| g * sigmoid(*x))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(vx.shape().to_vec(), dx).unwrap());
                }
                Op::SoftmaxLast(x) => {
                    let y = &node.value;
                    let w = *y.shape().last().unwrap();
                    let rows = y.numel() / w;
                    let mut dx = vec![0.0; y.numel()];
                    for r in 0..rows {
                        let ys = &y.values()[r * w..(r + 1) * w];
                        let gs = &grad.values()[r * w..(r + 1) * w];
                        let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                        for i in 0..w {
                            dx[r * w + i] = ys[i] * (gs[i] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(y.shape().to_vec(), dx).unwrap());
                }
                Op::MaskedSoftmax { src, mask } => {
                    let y = &node.value;
                    let ys = y.values();
                    let gs = grad.values();
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    let dx: Vec<f64> = (0..ys.len())
                        .map(|i| if mask[i] { ys[i] * (gs[i] - dot) } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *src, Tensor::new(y.shape().to_vec(), dx).unwrap());
                }
                Op::Scale(x, c) => {
                    let dx: Vec<f64> = grad.values().iter().map(|g| g * c).collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::new(grad.shape().to_vec(), dx).unwrap(),
                    );
                }
                Op::ExpNegScale(x, c) => {
                    let y = &node.value;
                    let dx: Vec<f64> = grad
                        .values()
                        .iter()
                        .zip(y.values())
                        .map(|(g, y)| -c * y * g)
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(y.shape().to_vec(), dx).unwrap());
                }
                Op::Sum(x) => {
                    let vx = self.value(*x);
                    let g = grad.item();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::new(vx.shape().to_vec(), vec![g; vx.numel()]).unwrap(),
                    );
                }
                Op::Mean(x) => {
                    let vx = self.value(*x);
                    let g = grad.item() / vx.numel() as f64;
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::new(vx.shape().to_vec(), vec![g; vx.numel()]).unwrap(),
                    );
                }
            }
        }
        Ok(())
    }
}

/// `C[m,n] += A[m,p] @ B[p,n]` with the inner loop over `n` for sequential
/// access on both `B` and `C`.
fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, p: usize, n: usize) {
    for i in 0..m {
        for k in 0..p {
            let aik = a[i * p + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
    match &mut grads[var.0] {
        Some(g) => {
            for (gv, dv) in g.values_mut().iter_mut().zip(delta.values()) {
                *gv += dv;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        denom += *v;
    }
    for v in row.iter_mut() {
        *v /= denom;
    }
}

/// Returns the rhs element count when rhs broadcasts over lhs's leading
/// axes, i.e. rhs (ignoring leading 1s) is a suffix of lhs.
fn broadcast_period(lhs: &[usize], rhs: &[usize]) -> Option<usize> {
    let trimmed: Vec<usize> = rhs.iter().copied().skip_while(|&d| d == 1).collect();
    if trimmed.len() > lhs.len() {
        return None;
    }
    if lhs[lhs.len() - trimmed.len()..] != trimmed[..] {
        return None;
    }
    Some(trimmed.iter().product())
}
