//! Finite-difference verification of reverse-mode gradients.
//!
//! The checker re-runs a caller-supplied forward builder with perturbed
//! parameter values and compares central differences against the gradients
//! the tape produced. Only the forward evaluation is shared between the two
//! routes, so a broken backward rule cannot hide.

use super::params::ParameterSet;
use super::tape::{Tape, Var};
use super::TensorError;

/// Default central-difference step.
pub const FD_EPSILON: f64 = 1e-6;

/// Relative-error floor: differences below this denominator are compared in
/// absolute terms, which keeps finite-difference roundoff (about 1e-10 for
/// unit-scale losses) from drowning tiny true gradients.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error across all checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate where it occurred: (parameter name, flat index).
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares tape gradients against central finite differences for every
/// coordinate of the named parameters (or a strided sample of at most
/// `max_coords_per_param`).
///
/// `build` must construct the full forward computation on the given tape and
/// return the scalar loss var; it is invoked `2 * coords + 1` times.
pub fn check_gradients<F>(
    params: &mut ParameterSet,
    names: &[&str],
    max_coords_per_param: usize,
    mut build: F,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Tape, &ParameterSet) -> Result<Var, TensorError>,
{
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    tape.backward(loss, params)?;

    let analytic: Vec<(String, Vec<f64>)> = names
        .iter()
        .map(|n| {
            params
                .get(n)
                .map(|p| (n.to_string(), p.grad.values().to_vec()))
        })
        .collect::<Result<_, _>>()?;
    params.zero_grads();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };

    for (name, grads) in &analytic {
        let n = grads.len();
        let stride = (n / max_coords_per_param.max(1)).max(1);
        for idx in (0..n).step_by(stride) {
            let numeric = central_difference(params, name, idx, &mut build)?;
            let a = grads[idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}

fn central_difference<F>(
    params: &mut ParameterSet,
    name: &str,
    idx: usize,
    build: &mut F,
) -> Result<f64, TensorError>
where
    F: FnMut(&mut Tape, &ParameterSet) -> Result<Var, TensorError>,
{
    let original = params.get(name)?.value.values()[idx];
    let eval = |params: &mut ParameterSet, v: f64, build: &mut F| -> Result<f64, TensorError> {
        let mut value = params.get(name)?.value.clone();
        value.values_mut()[idx] = v;
        params.set_value(name, value)?;
        let mut tape = Tape::new();
        let loss = build(&mut tape, params)?;
        Ok(tape.value(loss).item())
    };
    let plus = eval(params, original + FD_EPSILON, build)?;
    let minus = eval(params, original - FD_EPSILON, build)?;
    // Restore the untouched value bit-exactly.
    let mut value = params.get(name)?.value.clone();
    value.values_mut()[idx] = original;
    params.set_value(name, value)?;
    Ok((plus - minus) / (2.0 * FD_EPSILON))
}
