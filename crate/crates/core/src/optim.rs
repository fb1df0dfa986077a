//! Global-norm gradient clipping and the Adam update.

use crate::error::{CoupletError, Result};
use crate::params::ParamSet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Scale all gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the scale that was applied (1.0 when the norm was already small).
pub fn clip_global_norm(params: &mut ParamSet, max_norm: f64) -> Result<f64> {
    if max_norm <= 0.0 {
        return Err(CoupletError::Argument(format!("max_norm must be positive, got {max_norm}")));
    }
    let mut sq_sum = 0.0;
    for (_, e) in params.iter() {
        for &g in e.grad.values() {
            sq_sum += g * g;
        }
    }
    let norm = sq_sum.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for (_, e) in params.iter_mut() {
        for g in e.grad.values_mut() {
            *g *= scale;
        }
    }
    Ok(scale)
}

/// One Adam step with bias correction over every entry; gradients are
/// zeroed afterwards so the next accumulation starts clean.
pub fn adam_step(params: &mut ParamSet, lr: f64) -> Result<()> {
    for (name, e) in params.iter() {
        if e.grad.values().iter().any(|g| g.is_nan()) {
            return Err(CoupletError::Numeric(format!("NaN gradient in `{name}`, aborting step")));
        }
    }
    let t = params.bump_step();
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for (_, e) in params.iter_mut() {
        let n = e.value.len();
        for i in 0..n {
            let g = e.grad.values()[i];
            let m = ADAM_BETA1 * e.m.values()[i] + (1.0 - ADAM_BETA1) * g;
            let v = ADAM_BETA2 * e.v.values()[i] + (1.0 - ADAM_BETA2) * g * g;
            e.m.values_mut()[i] = m;
            e.v.values_mut()[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            e.value.values_mut()[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        e.grad.fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor2D;

    fn single_param(values: Vec<f64>, grads: Vec<f64>) -> ParamSet {
        let n = values.len();
        let mut p = ParamSet::new();
        p.insert("w", Tensor2D::from_values(n, 1, values).unwrap());
        p.grad_mut("w").values_mut().copy_from_slice(&grads);
        p
    }

    #[test]
    fn clip_halves_when_norm_is_double() {
        // grads (6, 8) -> norm 10, max 5 -> scale 0.5
        let mut p = single_param(vec![0.0, 0.0], vec![6.0, 8.0]);
        let scale = clip_global_norm(&mut p, 5.0).unwrap();
        assert!((scale - 0.5).abs() < 1e-12);
        assert_eq!(p.iter().next().unwrap().1.grad.values(), &[3.0, 4.0]);
    }

    #[test]
    fn clip_below_threshold_unchanged() {
        let mut p = single_param(vec![0.0], vec![3.0]);
        let scale = clip_global_norm(&mut p, 5.0).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(p.iter().next().unwrap().1.grad.values(), &[3.0]);
    }

    #[test]
    fn clip_zero_gradients_unchanged() {
        let mut p = single_param(vec![1.0], vec![0.0]);
        assert_eq!(clip_global_norm(&mut p, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn clip_rejects_nonpositive_max() {
        let mut p = single_param(vec![1.0], vec![1.0]);
        assert!(clip_global_norm(&mut p, 0.0).is_err());
        assert!(clip_global_norm(&mut p, -1.0).is_err());
    }

    #[test]
    fn clip_is_idempotent() {
        let mut p = single_param(vec![0.0, 0.0], vec![6.0, 8.0]);
        clip_global_norm(&mut p, 5.0).unwrap();
        let once: Vec<f64> = p.iter().next().unwrap().1.grad.values().to_vec();
        let scale = clip_global_norm(&mut p, 5.0).unwrap();
        assert!((scale - 1.0).abs() < 1e-9);
        let twice: Vec<f64> = p.iter().next().unwrap().1.grad.values().to_vec();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = single_param(vec![1.5], vec![0.0]);
        adam_step(&mut p, 0.1).unwrap();
        assert_eq!(p.value("w").values(), &[1.5]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With zero moments and grad g, step 1 update is
        // -lr * g / (|g| + eps) ~= -lr * sign(g).
        for g in [2.0, -0.003] {
            let mut p = single_param(vec![1.0], vec![g]);
            adam_step(&mut p, 0.001).unwrap();
            let expect = 1.0 - 0.001 * g.signum();
            assert!((p.value("w").values()[0] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_zeroes_grads_and_counts_steps() {
        let mut p = single_param(vec![1.0], vec![1.0]);
        adam_step(&mut p, 0.001).unwrap();
        assert_eq!(p.step_count(), 1);
        assert_eq!(p.iter().next().unwrap().1.grad.values(), &[0.0]);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut p = single_param(vec![1.0], vec![f64::NAN]);
        assert!(adam_step(&mut p, 0.001).is_err());
    }

    #[test]
    fn adam_deterministic_across_runs() {
        let run = || {
            let mut p = single_param(vec![1.0, -2.0], vec![0.5, 0.25]);
            for _ in 0..10 {
                adam_step(&mut p, 0.01).unwrap();
                let vals: Vec<f64> = p.value("w").values().to_vec();
                p.grad_mut("w").values_mut().copy_from_slice(&vals);
            }
            p.value("w").values().to_vec()
        };
        assert_eq!(run(), run());
    }
}
