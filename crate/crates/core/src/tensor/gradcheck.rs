use super::{ParamSet, Tape, Var};
use crate::error::{Error, Result};

/// Compares tape gradients of `forward` against central differences over
/// every coordinate of every parameter.
///
/// Returns `max |analytic - numeric| / max(1, |numeric|)`. `forward` must be
/// deterministic; max-pool and absolute-value kinks at the sample point
/// break the comparison, so callers jitter inputs off ties first.
pub fn grad_check<F>(forward: F, params: &mut ParamSet, eps: f64) -> Result<f64>
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("grad_check eps {eps} outside (0, 1e-2]")));
    }
    let analytic = {
        let mut tape = Tape::with_params(params);
        let loss = forward(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |params: &ParamSet| -> Result<f64> {
        let mut tape = Tape::with_params(params).finite_checks(false);
        let loss = forward(&mut tape)?;
        tape.value(loss)
            .item()
            .ok_or_else(|| Error::NonScalarLoss(tape.shape(loss).to_vec()))
    };
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let n = params.value(id).len();
        for i in 0..n {
            let orig = params.value(id).data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
