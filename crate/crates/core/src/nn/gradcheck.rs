//! Central finite-difference gradient verification.
//!
//! The checker only evaluates the forward function; it never consults the
//! backward rules it is checking, apart from reading the analytic result.

use super::{Real, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`. The floor keeps
/// near-zero gradients from dominating with rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward gradients of a scalar-valued `f` against central
/// differences with step `eps`, for every element of every input.
pub fn check_gradients<T, F>(inputs: &[Tensor<T>], eps: f64, floor: f64, f: F) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item().as_f64())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.constant(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.of(*var) {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; inputs[k].len()],
        };
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + T::of(eps);
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - T::of(eps);
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            report.max_abs_error = report.max_abs_error.max((analytic[i] - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(relative_error(analytic[i], numeric, floor));
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Reduces any node to a scalar through a fixed pseudo-random projection,
/// so every output element carries a distinct weight into the loss.
pub fn project_to_scalar<T: Real>(tape: &mut Tape<T>, x: Var, seed: u64) -> Result<Var> {
    let n = tape.value(x).len();
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let weights = Tensor::from_fn(vec![1, n], |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        T::of(((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0)
    });
    let w = tape.constant(weights);
    let flat = tape.reshape(x, vec![1, n])?;
    let y = tape.linear(flat, w, None)?;
    tape.reshape(y, vec![])
}
