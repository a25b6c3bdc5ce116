//! Overlap metrics on binary masks.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// `(f1, iou)` of two masks whose nonzero entries mark the foreground.
/// Two empty masks score 1 on both.
pub fn f1_iou<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, f64)> {
    if pred.shape() != target.shape() {
        return shape_err(format!("f1_iou: {:?} vs {:?}", pred.shape(), target.shape()));
    }
    let (mut inter, mut p, mut t) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.data().iter().zip(target.data()) {
        let (a, b) = (a != T::zero(), b != T::zero());
        inter += (a && b) as u64;
        p += a as u64;
        t += b as u64;
    }
    if p + t == 0 {
        return Ok((1.0, 1.0));
    }
    let union = p + t - inter;
    Ok((2.0 * inter as f64 / (p + t) as f64, inter as f64 / union as f64))
}

/// Foreground where the sigmoid probability reaches 0.5, i.e. logit ≥ 0.
pub fn binarize_logits<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    logits.map(|z| if z >= T::zero() { T::one() } else { T::zero() })
}

/// Mean and population variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}
