//! Central finite-difference check of analytic gradients. Used by the test
//! suites of every trainable architecture in this crate.

use crate::params::ParamSet;

/// Compare analytic gradients against central differences over every scalar
/// parameter and return the maximum relative error.
///
/// `loss_fn` evaluates the loss for the current parameter values.
/// `grad_fn` evaluates the loss *and* writes gradients into `params`
/// (overwriting, not accumulating, or called on zeroed gradients).
///
/// Relative error per scalar is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
/// A NaN anywhere propagates to the returned value, which makes the check
/// fail loudly.
pub fn grad_check<L, G>(params: &mut ParamSet, mut loss_fn: L, mut grad_fn: G, eps: f64) -> f64
where
    L: FnMut(&ParamSet) -> f64,
    G: FnMut(&mut ParamSet) -> f64,
{
    params.zero_grads();
    let _ = grad_fn(params);
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .map(|(name, e)| (name.to_string(), e.grad.values().to_vec()))
        .collect();

    let mut max_rel = 0.0f64;
    for (name, grads) in &analytic {
        for (i, &a) in grads.iter().enumerate() {
            let orig = params.value(name).values()[i];
            params.value_mut(name).values_mut()[i] = orig + eps;
            let plus = loss_fn(params);
            params.value_mut(name).values_mut()[i] = orig - eps;
            let minus = loss_fn(params);
            params.value_mut(name).values_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel.is_nan() {
                return f64::NAN;
            }
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}
