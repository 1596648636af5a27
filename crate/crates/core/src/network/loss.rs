//! Softmax cross-entropy head.

use ndarray::{Array2, ArrayView2};

use crate::error::{GconvError, Result};

/// Per-sample losses `-log softmax(logits)[label]` and the softmax
/// probabilities.
pub fn softmax_xent_forward(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(Vec<f64>, Array2<f64>)> {
    let (b, k) = logits.dim();
    if labels.len() != b {
        return Err(GconvError::LengthMismatch {
            what: "labels vs batch",
            expected: b,
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(GconvError::OutOfRange { index: bad, len: k });
    }
    let mut probs = Array2::zeros((b, k));
    let mut losses = Vec::with_capacity(b);
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        for (j, &z) in row.iter().enumerate() {
            probs[[i, j]] = (z - log_norm).exp();
        }
        losses.push(log_norm - row[labels[i]]);
    }
    Ok((losses, probs))
}

/// Gradient of `sum of losses / scale` w.r.t. the logits:
/// `(softmax - onehot) / scale`. `scale` is the full minibatch size.
pub fn softmax_xent_backward(probs: ArrayView2<f64>, labels: &[usize], scale: f64) -> Array2<f64> {
    let mut grad = probs.to_owned();
    for (i, &l) in labels.iter().enumerate() {
        grad[[i, l]] -= 1.0;
    }
    grad /= scale;
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Array2::from_elem((2, 10), 0.37);
        let (losses, probs) = softmax_xent_forward(logits.view(), &[3, 9]).unwrap();
        for l in losses {
            assert!((l - 10f64.ln()).abs() < 1e-12);
        }
        assert!((probs.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stable_for_large_logits() {
        let (losses, probs) = softmax_xent_forward(array![[1000.0, 0.0, -1000.0]].view(), &[0]).unwrap();
        assert!(losses[0] >= 0.0 && losses[0] < 1e-12);
        assert!(probs.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn gradient_sums_to_zero() {
        let logits = array![[0.1, -0.3, 2.0], [1.0, 1.0, 0.0]];
        let (_, probs) = softmax_xent_forward(logits.view(), &[2, 0]).unwrap();
        let g = softmax_xent_backward(probs.view(), &[2, 0], 2.0);
        for row in g.rows() {
            assert!(row.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn label_errors() {
        assert!(softmax_xent_forward(array![[0.0, 1.0]].view(), &[2]).is_err());
        assert!(softmax_xent_forward(array![[0.0, 1.0]].view(), &[]).is_err());
    }
}
