use crate::error::{Error, Result};

/// Floor applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `(1 − ε)·onehot(label) + ε/m`.
pub fn smoothed_target(num_classes: usize, label: usize, smoothing: f64) -> Vec<f64> {
    let share = smoothing / num_classes as f64;
    let mut y = vec![share; num_classes];
    y[label] += 1.0 - smoothing;
    y
}

/// Cross-entropy of `probs` against the (optionally smoothed) one-hot target.
pub fn cross_entropy_loss(probs: &[f64], label: usize, smoothing: f64) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Config(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    Ok(cross_entropy_unchecked(probs, label, smoothing))
}

pub(crate) fn cross_entropy_unchecked(probs: &[f64], label: usize, smoothing: f64) -> f64 {
    if smoothing == 0.0 {
        return -probs[label].max(PROB_FLOOR).ln();
    }
    smoothed_target(probs.len(), label, smoothing)
        .iter()
        .zip(probs)
        .map(|(y, p)| -y * p.max(PROB_FLOOR).ln())
        .sum()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
