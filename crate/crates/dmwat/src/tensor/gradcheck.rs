//! Finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it stays independent of
//! the backward rules it is checking.

use super::{Binding, ParamSet, Tape, Var};
use crate::error::Result;

pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Relative error with a floor so near-zero pairs compare absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-6, f64::max(a.abs(), b.abs()))
}

/// Check the analytic gradient of `build` (a scalar-loss forward pass over
/// `params`) against central finite differences with step `h` on every
/// scalar parameter.
pub fn gradcheck<F>(params: &mut ParamSet, h: f64, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &Binding) -> Result<Var>,
{
    // analytic pass
    params.zero_grads();
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let loss = build(&mut tape, &binding)?;
    tape.backward(loss)?;
    binding.harvest(&tape, params);

    let analytic: Vec<Vec<f64>> = (0..params.len())
        .map(|i| params.grad(super::ParamId(i)).unwrap().to_vec())
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        checked: 0,
    };

    for pi in 0..params.len() {
        let id = super::ParamId(pi);
        for k in 0..params.value(id).numel() {
            let orig = params.value(id).data()[k];

            params.value_mut(id).data_mut()[k] = orig + h;
            let plus = eval_loss(params, &mut build)?;
            params.value_mut(id).data_mut()[k] = orig - h;
            let minus = eval_loss(params, &mut build)?;
            params.value_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_err(analytic[pi][k], numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{}[{}]", params.name(id), k);
            }
        }
    }
    params.zero_grads();
    Ok(report)
}

fn eval_loss<F>(params: &ParamSet, build: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let loss = build(&mut tape, &binding)?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_gradient_checks_out() {
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::row(&[0.5, -1.5, 2.0]));
        let report = gradcheck(&mut params, 1e-5, |tape, b| {
            let x = b.var(w);
            let sq = tape.mul(x, x)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "{}", report.max_rel_err);
        assert_eq!(report.checked, 3);
    }
}
