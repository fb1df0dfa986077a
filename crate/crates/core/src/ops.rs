//! Forward math shared by the language model and the encoder-decoder:
//! affine maps, stable softmax, cross-entropy.

use crate::error::{CoupletError, Result};
use crate::tensor::Tensor2D;

/// Additive constant inside `cross_entropy`'s logarithm so a zero
/// probability produces a large finite loss instead of infinity.
pub const CROSS_ENTROPY_EPS: f64 = 1e-12;

/// `W x + b`.
pub fn affine(x: &[f64], w: &Tensor2D, b: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.cols() || b.len() != w.rows() {
        return Err(CoupletError::Shape {
            op: "affine".into(),
            detail: format!(
                "W is {}x{}, x has len {}, b has len {}",
                w.rows(),
                w.cols(),
                x.len(),
                b.len()
            ),
        });
    }
    let mut out = vec![0.0; w.rows()];
    w.matvec(x, &mut out);
    for (o, bv) in out.iter_mut().zip(b.iter()) {
        *o += bv;
    }
    Ok(out)
}

/// Numerically stable softmax (max subtraction). `-inf` entries are legal
/// and map to probability zero; at least one entry must be finite.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(CoupletError::Argument("softmax of empty vector".into()));
    }
    if scores.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(CoupletError::Numeric("softmax input contains NaN or +inf".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(CoupletError::Numeric("softmax input is all -inf".into()));
    }
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    Ok(out)
}

/// Log of softmax, with the same stability trick.
pub fn log_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(CoupletError::Argument("log_softmax of empty vector".into()));
    }
    if scores.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(CoupletError::Numeric("log_softmax input contains NaN or +inf".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(CoupletError::Numeric("log_softmax input is all -inf".into()));
    }
    let log_sum: f64 = scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln() + max;
    Ok(scores.iter().map(|&s| s - log_sum).collect())
}

/// `-ln(pred[target] + eps)` for a probability vector `pred`.
pub fn cross_entropy(pred: &[f64], target: usize) -> Result<f64> {
    if target >= pred.len() {
        return Err(CoupletError::Argument(format!(
            "cross_entropy target {target} out of range for {} classes",
            pred.len()
        )));
    }
    let sum: f64 = pred.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(CoupletError::Numeric(format!(
            "cross_entropy input sums to {sum}, not a distribution"
        )));
    }
    Ok(-(pred[target] + CROSS_ENTROPY_EPS).ln())
}

pub fn tanh_vec(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.tanh();
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
