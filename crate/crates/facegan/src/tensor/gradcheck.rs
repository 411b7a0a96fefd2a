//! Central finite-difference verification of tape gradients, used by the
//! gradient test suites. Runs in `f64`; the differencing path only ever
//! evaluates forward passes, so it stays independent of the backward code
//! it checks.

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;

/// Floor applied to the error denominator so near-zero gradients compare
/// against an absolute scale instead of blowing up the relative error.
pub const ABS_FLOOR: f64 = 1e-6;

/// Check the analytic gradient of `f` with respect to every element of
/// every input. `f` receives a fresh tape plus one leaf per input and must
/// return a scalar root. Returns the maximum relative error observed.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, rel_tol: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        tape.scalar(root)
    };

    // Analytic gradients in one backward pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(ABS_FLOOR);
            let rel = (a - numeric).abs() / denom;
            max_rel = max_rel.max(rel);
            if rel > rel_tol {
                return Err(Error::Numeric {
                    step: 0,
                    message: format!(
                        "gradient mismatch at input {i} element {j}: \
                         analytic {a:.9e}, finite-difference {numeric:.9e}, rel err {rel:.3e}"
                    ),
                });
            }
        }
    }
    Ok(max_rel)
}

/// [`check_gradients`] with the standard step and tolerance.
pub fn check_gradients_default<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_gradients(inputs, DEFAULT_STEP, DEFAULT_REL_TOL, f)
}
