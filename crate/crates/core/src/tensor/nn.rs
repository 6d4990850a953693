//! Small differentiable building blocks: MLPs, a GRU cell, and single-query
//! multi-head attention, all parameterized through [`ParameterSet`] names.

use rand_chacha::ChaCha12Rng;

use super::params::ParameterSet;
use super::tape::{Tape, Var};
use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

/// Fully connected stack: hidden layers use `activation`, the output layer
/// is affine.
#[derive(Debug, Clone)]
pub struct MlpParams {
    prefix: String,
    dims: Vec<usize>,
    activation: Activation,
}

impl MlpParams {
    /// Registers weights (uniform `±sqrt(6/(fan_in+fan_out))`) and zero
    /// biases under `{prefix}.w{i}` / `{prefix}.b{i}`.
    pub fn init(
        params: &mut ParameterSet,
        prefix: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self, TensorError> {
        if dims.len() < 2 {
            return Err(TensorError::InvalidArgument {
                op: "mlp_init",
                msg: format!("need at least input and output dims, got {dims:?}"),
            });
        }
        for (i, pair) in dims.windows(2).enumerate() {
            params.define_uniform(&format!("{prefix}.w{i}"), pair[0], pair[1], rng)?;
            params.define(&format!("{prefix}.b{i}"), Tensor::zeros(vec![1, pair[1]]))?;
        }
        Ok(Self {
            prefix: prefix.to_string(),
            dims: dims.to_vec(),
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.dims.len() - 1)
            .flat_map(|i| {
                [
                    format!("{}.w{i}", self.prefix),
                    format!("{}.b{i}", self.prefix),
                ]
            })
            .collect()
    }
}

/// Applies the MLP to `x` of shape `[rows, in_dim]`.
pub fn mlp_forward(
    tape: &mut Tape,
    params: &ParameterSet,
    mlp: &MlpParams,
    x: Var,
) -> Result<Var, TensorError> {
    let got = tape.value(x).shape().to_vec();
    if got.len() != 2 || got[1] != mlp.in_dim() {
        return Err(TensorError::ShapeMismatch {
            op: "mlp_forward",
            lhs: got,
            rhs: vec![1, mlp.in_dim()],
        });
    }
    let layers = mlp.dims.len() - 1;
    let mut h = x;
    for i in 0..layers {
        let w = tape.param(params, &format!("{}.w{i}", mlp.prefix))?;
        let b = tape.param(params, &format!("{}.b{i}", mlp.prefix))?;
        let lin = tape.matmul(h, w)?;
        h = tape.add(lin, b)?;
        if i + 1 < layers {
            h = match mlp.activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
                Activation::Sigmoid => tape.sigmoid(h),
            };
        }
    }
    Ok(h)
}

/// Gated recurrent unit parameters over `{prefix}.{w,u,b}_{z,r,h}`.
#[derive(Debug, Clone)]
pub struct GruParams {
    prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn init(
        params: &mut ParameterSet,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self, TensorError> {
        for gate in ["z", "r", "h"] {
            params.define_uniform(&format!("{prefix}.w_{gate}"), in_dim, hidden, rng)?;
            params.define_uniform(&format!("{prefix}.u_{gate}"), hidden, hidden, rng)?;
            params.define(&format!("{prefix}.b_{gate}"), Tensor::zeros(vec![1, hidden]))?;
        }
        Ok(Self {
            prefix: prefix.to_string(),
            in_dim,
            hidden,
        })
    }
}

/// One GRU step:
/// z = sigmoid(x W_z + h U_z + b_z)
/// r = sigmoid(x W_r + h U_r + b_r)
/// c = tanh(x W_h + (r * h) U_h + b_h)
/// h' = (1 - z) * c + z * h
pub fn gru_cell(
    tape: &mut Tape,
    params: &ParameterSet,
    gru: &GruParams,
    x: Var,
    h_prev: Var,
) -> Result<Var, TensorError> {
    let sx = tape.value(x).shape().to_vec();
    let sh = tape.value(h_prev).shape().to_vec();
    if sx != [1, gru.in_dim] || sh != [1, gru.hidden] {
        return Err(TensorError::ShapeMismatch {
            op: "gru_cell",
            lhs: sx,
            rhs: sh,
        });
    }
    let gate = |tape: &mut Tape, name: &str, xin: Var, hin: Var| -> Result<Var, TensorError> {
        let w = tape.param(params, &format!("{}.w_{name}", gru.prefix))?;
        let u = tape.param(params, &format!("{}.u_{name}", gru.prefix))?;
        let b = tape.param(params, &format!("{}.b_{name}", gru.prefix))?;
        let xw = tape.matmul(xin, w)?;
        let hu = tape.matmul(hin, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    };
    let z = gate(tape, "z", x, h_prev)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, "r", x, h_prev)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h_prev)?;
    let c = gate(tape, "h", x, rh)?;
    let c = tape.tanh(c);

    let zc_h = tape.mul(z, h_prev)?;
    let neg_z = tape.scale(z, -1.0);
    let ones = tape.constant(Tensor::new(vec![1, gru.hidden], vec![1.0; gru.hidden])?);
    let one_minus_z = tape.add(neg_z, ones)?;

    // Reassociate as (1-z)*c + z*h.
    let keep_new = tape.mul(one_minus_z, c)?;
    tape.add(keep_new, zc_h)
}

/// Parameters for single-query multi-head attention.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    prefix: String,
    pub query_dim: usize,
    pub key_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
}

impl AttentionParams {
    pub fn init(
        params: &mut ParameterSet,
        prefix: &str,
        query_dim: usize,
        key_dim: usize,
        model_dim: usize,
        heads: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self, TensorError> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(TensorError::InvalidArgument {
                op: "attention_init",
                msg: format!("model dim {model_dim} not divisible by {heads} heads"),
            });
        }
        params.define_uniform(&format!("{prefix}.wq"), query_dim, model_dim, rng)?;
        params.define_uniform(&format!("{prefix}.wk"), key_dim, model_dim, rng)?;
        params.define_uniform(&format!("{prefix}.wv"), key_dim, model_dim, rng)?;
        params.define_uniform(&format!("{prefix}.wo"), model_dim, model_dim, rng)?;
        params.define(&format!("{prefix}.bo"), Tensor::zeros(vec![1, model_dim]))?;
        Ok(Self {
            prefix: prefix.to_string(),
            query_dim,
            key_dim,
            model_dim,
            heads,
        })
    }
}

/// Attention with one `[1, query_dim]` query over `n` keys/values of shape
/// `[n, key_dim]`. `mask[i] == true` keeps entry `i`. If nothing is kept
/// (or there are no entries at all) the result is a zero vector.
pub fn multi_head_attention(
    tape: &mut Tape,
    params: &ParameterSet,
    attn: &AttentionParams,
    query: Var,
    keys: Var,
    mask: &[bool],
) -> Result<Var, TensorError> {
    let qs = tape.value(query).shape().to_vec();
    let ks = tape.value(keys).shape().to_vec();
    if qs != [1, attn.query_dim] || ks.len() != 2 || ks[1] != attn.key_dim {
        return Err(TensorError::ShapeMismatch {
            op: "multi_head_attention",
            lhs: qs,
            rhs: ks,
        });
    }
    if ks[0] != mask.len() {
        return Err(TensorError::InvalidArgument {
            op: "multi_head_attention",
            msg: format!("{} keys but {} mask entries", ks[0], mask.len()),
        });
    }
    if mask.iter().all(|m| !m) {
        return Ok(tape.constant(Tensor::zeros(vec![1, attn.model_dim])));
    }

    let wq = tape.param(params, &format!("{}.wq", attn.prefix))?;
    let wk = tape.param(params, &format!("{}.wk", attn.prefix))?;
    let wv = tape.param(params, &format!("{}.wv", attn.prefix))?;
    let q = tape.matmul(query, wq)?;
    let k = tape.matmul(keys, wk)?;
    let v = tape.matmul(keys, wv)?;

    let dh = attn.model_dim / attn.heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(attn.heads);
    for h in 0..attn.heads {
        let qh = tape.slice_last(q, h * dh, dh)?;
        let kh = tape.slice_last(k, h * dh, dh)?;
        let vh = tape.slice_last(v, h * dh, dh)?;
        let scores = tape.matmul_transb(qh, kh)?;
        let scores = tape.scale(scores, inv_sqrt);
        let weights = tape.masked_softmax(scores, mask)?;
        heads.push(tape.matmul(weights, vh)?);
    }
    let merged = tape.concat_last(&heads)?;
    let wo = tape.param(params, &format!("{}.wo", attn.prefix))?;
    let bo = tape.param(params, &format!("{}.bo", attn.prefix))?;
    let projected = tape.matmul(merged, wo)?;
    tape.add(projected, bo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(11)
    }

    #[test]
    fn gru_zero_params_halves_previous_state() {
        // All-zero weights: z = sigmoid(0) = 0.5, candidate = tanh(0) = 0,
        // so h' = 0.5 * h_prev.
        let mut params = ParameterSet::new();
        let gru = GruParams::init(&mut params, "gru", 2, 1, &mut rng()).unwrap();
        for gate in ["z", "r", "h"] {
            params
                .set_value(&format!("gru.w_{gate}"), Tensor::zeros(vec![2, 1]))
                .unwrap();
            params
                .set_value(&format!("gru.u_{gate}"), Tensor::zeros(vec![1, 1]))
                .unwrap();
        }
        let mut tape = Tape::new();
        let x = tape.constant_row(&[0.7, -0.3]);
        let h = tape.constant_row(&[1.0]);
        let out = gru_cell(&mut tape, &params, &gru, x, h).unwrap();
        assert_eq!(tape.value(out).values(), &[0.5]);
    }

    #[test]
    fn mlp_shape_check_and_forward() {
        let mut params = ParameterSet::new();
        let mlp = MlpParams::init(&mut params, "m", &[3, 4, 2], Activation::Relu, &mut rng())
            .unwrap();
        let mut tape = Tape::new();
        let x = tape.constant_row(&[0.1, 0.2, 0.3]);
        let y = mlp_forward(&mut tape, &params, &mlp, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2]);

        let bad = tape.constant_row(&[0.1, 0.2]);
        assert!(mlp_forward(&mut tape, &params, &mlp, bad).is_err());
    }

    #[test]
    fn identity_mlp_passes_value_through() {
        let mut params = ParameterSet::new();
        let mlp =
            MlpParams::init(&mut params, "id", &[3, 3], Activation::Relu, &mut rng()).unwrap();
        params
            .set_value(
                "id.w0",
                Tensor::new(
                    vec![3, 3],
                    vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                )
                .unwrap(),
            )
            .unwrap();
        let mut tape = Tape::new();
        let x = tape.constant_row(&[0.5, -1.5, 2.0]);
        let y = mlp_forward(&mut tape, &params, &mlp, x).unwrap();
        assert_eq!(tape.value(y).values(), &[0.5, -1.5, 2.0]);
    }

    #[test]
    fn attention_fully_masked_returns_zero_vector() {
        let mut params = ParameterSet::new();
        let attn = AttentionParams::init(&mut params, "a", 4, 6, 4, 2, &mut rng()).unwrap();
        let mut tape = Tape::new();
        let q = tape.constant_row(&[0.1, 0.2, 0.3, 0.4]);
        let k = tape.constant(Tensor::zeros(vec![3, 6]));
        let out = multi_head_attention(&mut tape, &params, &attn, q, k, &[false; 3]).unwrap();
        assert_eq!(tape.value(out).values(), &[0.0; 4]);
    }

    #[test]
    fn attention_outputs_are_finite_and_shaped() {
        let mut params = ParameterSet::new();
        let attn = AttentionParams::init(&mut params, "a", 4, 6, 8, 2, &mut rng()).unwrap();
        let mut tape = Tape::new();
        let q = tape.constant_row(&[0.1, -0.2, 0.3, 0.4]);
        let k = tape.constant(
            Tensor::new(vec![2, 6], (0..12).map(|i| i as f64 / 10.0).collect()).unwrap(),
        );
        let out =
            multi_head_attention(&mut tape, &params, &attn, q, k, &[true, true]).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 8]);
        assert!(tape.value(out).values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut params = ParameterSet::new();
        assert!(AttentionParams::init(&mut params, "a", 4, 4, 6, 4, &mut rng()).is_err());
    }
}
