use crate::error::{Error, Result};
use crate::label::LabelVector;

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerics(format!("non-finite {what}")))
    }
}

/// `log Σ exp(x)` with max shift.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pull a gradient w.r.t. softmax probabilities back to the logits:
/// `p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

/// Soft-label cross entropy `−Σ y_c log softmax(z)_c` and its gradient
/// `softmax(z) − y`.
pub fn cross_entropy_soft(logits: &[f64], label: &LabelVector) -> Result<(f64, Vec<f64>)> {
    if logits.len() != label.n_classes() {
        return Err(Error::Shape(format!(
            "{} logits for a {}-class label",
            logits.len(),
            label.n_classes()
        )));
    }
    check_finite(logits, "logits")?;
    let lse = log_sum_exp(logits);
    let loss = label
        .probs()
        .iter()
        .zip(logits)
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, z)| y * (lse - z))
        .sum();
    let grad = softmax(logits)
        .into_iter()
        .zip(label.probs())
        .map(|(p, y)| p - y)
        .collect();
    Ok((loss, grad))
}

/// Π-model consistency: mean squared difference and the gradients for
/// both arguments.
pub fn pi_consistency_loss(out1: &[f64], out2: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if out1.len() != out2.len() || out1.is_empty() {
        return Err(Error::Shape(format!(
            "consistency needs equal nonempty outputs, got {} and {}",
            out1.len(),
            out2.len()
        )));
    }
    let n = out1.len() as f64;
    let diff: Vec<f64> = out1.iter().zip(out2).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let g1: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
    let g2 = g1.iter().map(|g| -g).collect();
    Ok((loss, g1, g2))
}
