//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! every backward rule it is used to verify.

use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::{BgnnError, Result};

/// Largest deviation found by [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_input: usize,
    pub worst_entry: usize,
    pub checked: usize,
}

/// Denominator floor for the relative error, so that gradients which are
/// exactly zero compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval_scalar<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(BgnnError::contract("gradient check needs a scalar output"));
    }
    Ok(v.data()[0])
}

/// Compares tape gradients of `f` w.r.t. every entry of every input with
/// central differences of step `h`.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_input: 0,
        worst_entry: 0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.iter().map(Tensor::detached).collect();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[which].len());
        for k in 0..inputs[which].len() {
            let orig = work[which].data()[k];
            work[which].data_mut()[k] = orig + h;
            let plus = eval_scalar(&work, &f)?;
            work[which].data_mut()[k] = orig - h;
            let minus = eval_scalar(&work, &f)?;
            work[which].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = relative_error(analytic[k], numeric);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((analytic[k] - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_input = which;
                report.worst_entry = k;
            }
        }
    }
    Ok(report)
}

/// Uniform entries in `[-1, 1)`.
pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}
