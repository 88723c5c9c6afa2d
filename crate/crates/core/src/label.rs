//! Dense label vectors on the probability simplex.

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` for a valid label.
pub const SIMPLEX_TOL: f64 = 1e-6;
/// Tolerance on `Σ w = 1` for mixing weights.
pub const WEIGHT_TOL: f64 = 1e-9;

/// A probability vector over `n_classes`. One-hot and mixed labels share
/// this representation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    probs: Vec<f64>,
}

impl LabelVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("label vector has no classes".into()));
        }
        if let Some(c) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidValue(format!(
                "label entry {c} is {}, must be finite and nonnegative",
                probs[c]
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidValue(format!(
                "label entries sum to {sum}, expected 1"
            )));
        }
        Ok(LabelVector { probs })
    }

    pub fn one_hot(class: usize, n_classes: usize) -> Result<Self> {
        if class >= n_classes {
            return Err(Error::InvalidValue(format!(
                "class {class} out of range for {n_classes} classes"
            )));
        }
        let mut probs = vec![0.0; n_classes];
        probs[class] = 1.0;
        Ok(LabelVector { probs })
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Index of the largest entry (first on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Weighted sum `Σ_j w_j · labels_j`.
pub fn mix_labels(labels: &[LabelVector], weights: &[f64]) -> Result<LabelVector> {
    let first = labels
        .first()
        .ok_or_else(|| Error::EmptyInput("mix_labels needs at least one label".into()))?;
    if labels.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} weights",
            labels.len(),
            weights.len()
        )));
    }
    let n = first.n_classes();
    if let Some(bad) = labels.iter().position(|l| l.n_classes() != n) {
        return Err(Error::Shape(format!(
            "label {bad} has {} classes, expected {n}",
            labels[bad].n_classes()
        )));
    }
    if let Some(bad) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Weight(format!(
            "weight {bad} is {}, must be finite and nonnegative",
            weights[bad]
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Weight(format!("weights sum to {total}, expected 1")));
    }

    let mut probs = vec![0.0; n];
    for (label, &w) in labels.iter().zip(weights) {
        for (out, p) in probs.iter_mut().zip(&label.probs) {
            *out += w * p;
        }
    }
    Ok(LabelVector { probs })
}
