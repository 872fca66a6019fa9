//! Softmax and cross-entropy evaluated in double precision.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest probability fed to the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Max-subtracted softmax; stable for logits of any finite magnitude.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total) as f32).collect()
}

/// Natural-log cross-entropy of a probability vector against `label`.
///
/// Returns the loss and the gradient of softmax+cross-entropy with respect to
/// the logits, `probs - onehot(label)`.
pub fn cross_entropy(probs: &[f32], label: usize) -> Result<(f64, Vec<f32>)> {
    if label >= probs.len() {
        return Err(Error::config(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let loss = -(probs[label] as f64).max(PROB_FLOOR).ln();
    let mut grad = probs.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Batch-mean cross-entropy over the rows of `probs` (`[N, K]`).
///
/// The returned gradient is with respect to the pre-softmax logits and is
/// already divided by `N`.
pub fn batch_cross_entropy(probs: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let &[n, _] = probs.shape() else {
        return Err(Error::config(format!(
            "batch cross-entropy expects [N, K], got {:?}",
            probs.shape()
        )));
    };
    if labels.len() != n {
        return Err(Error::config(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let scale = 1.0 / n as f32;
    let mut total = 0f64;
    let mut grad = Vec::with_capacity(probs.len());
    for (i, &label) in labels.iter().enumerate() {
        let (loss, g) = cross_entropy(probs.row(i), label as usize)?;
        total += loss;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    let mean = total / n as f64;
    if !mean.is_finite() {
        return Err(Error::numeric("non-finite cross-entropy loss"));
    }
    Ok((mean, Tensor::new(probs.shape(), grad)?))
}
