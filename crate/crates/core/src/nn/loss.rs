use serde::{Deserialize, Serialize};

/// Loss functions supported by the training driver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    /// Mean Huber penalty over output cells.
    Huber { delta: f64 },
    /// Two-class softmax cross-entropy (binary cross-entropy on the
    /// positive-class probability).
    BinaryCrossEntropy,
    /// Squared error between the selected action value and its regression target.
    SquaredTd,
}

/// Huber penalty of a single residual.
#[inline]
pub fn huber(err: f64, delta: f64) -> f64 {
    let a = err.abs();
    if a <= delta {
        0.5 * err * err
    } else {
        delta * a - 0.5 * delta * delta
    }
}

/// Derivative of [`huber`] with respect to the residual.
#[inline]
pub fn huber_grad(err: f64, delta: f64) -> f64 {
    if err.abs() <= delta {
        err
    } else {
        delta * err.signum()
    }
}

/// Mean Huber penalty over paired cells.
pub fn huber_mean(pred: &[f64], target: &[f64], delta: f64) -> f64 {
    assert_eq!(pred.len(), target.len());
    pred.iter().zip(target).map(|(p, t)| huber(p - t, delta)).sum::<f64>() / pred.len() as f64
}

/// Numerically stable two-way softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Cross-entropy of a two-class softmax against a class index, computed from
/// logits via log-sum-exp.
pub fn softmax2_cross_entropy(logits: [f64; 2], class: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[class]
}

/// Binary cross-entropy of a probability against a 0/1 target.
pub fn binary_cross_entropy(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}
