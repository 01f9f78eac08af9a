//! Softmax cross-entropy.

use super::tensor::{Scalar, Tensor};
use super::ComputeError;

/// Cross-entropy of one logit vector against a class index.
///
/// Log-sum-exp is computed with max subtraction and `ln_1p`, so the loss
/// stays accurate when one logit dominates. Returns the loss and the
/// gradient `softmax - one_hot`.
pub fn softmax_cross_entropy<F: Scalar>(
    logits: &[F],
    target: usize,
) -> Result<(F, Vec<F>), ComputeError> {
    if target >= logits.len() {
        return Err(ComputeError::BadTarget {
            index: target,
            classes: logits.len(),
        });
    }
    let max = logits
        .iter()
        .fold(F::neg_infinity(), |acc, &v| if v > acc { v } else { acc });
    // sum over the non-max remainder keeps ln(1 + rest) exact for small rest
    let mut rest = F::zero();
    let mut max_seen = false;
    for &v in logits {
        if !max_seen && v == max {
            max_seen = true;
        } else {
            rest += (v - max).exp();
        }
    }
    let lse = max + rest.ln_1p();
    let loss = lse - logits[target];
    let grad: Vec<F> = logits
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let p = (v - lse).exp();
            if i == target {
                p - F::one()
            } else {
                p
            }
        })
        .collect();
    Ok((loss, grad))
}

/// Per-sample cross-entropy over a `[B, C]` logits tensor.
///
/// Returns per-sample losses and the per-sample gradients stacked into a
/// `[B, C]` tensor; callers scale rows by their batch-combination weight.
pub fn softmax_cross_entropy_batch<F: Scalar>(
    logits: &Tensor<F>,
    targets: &[usize],
) -> Result<(Vec<F>, Tensor<F>), ComputeError> {
    if logits.rank() != 2 || logits.dim(0) != targets.len() {
        return Err(ComputeError::ShapeMismatch {
            context: "softmax_cross_entropy_batch",
            expected: vec![targets.len(), logits.dim(logits.rank() - 1)],
            got: logits.shape().to_vec(),
        });
    }
    let (b_n, c_n) = (logits.dim(0), logits.dim(1));
    let mut losses = Vec::with_capacity(b_n);
    let mut grads = Tensor::zeros(&[b_n, c_n]);
    for b in 0..b_n {
        let row = &logits.data()[b * c_n..(b + 1) * c_n];
        let (loss, grad) = softmax_cross_entropy(row, targets[b])?;
        losses.push(loss);
        grads.data_mut()[b * c_n..(b + 1) * c_n].copy_from_slice(&grad);
    }
    Ok((losses, grads))
}
