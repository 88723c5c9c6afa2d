use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use crate::error::{Error, Result};

/// Momentum SGD with step decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Epochs (0-based) at which the rate is multiplied by `decay_factor`.
    #[serde(default)]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

fn default_decay() -> f64 {
    0.1
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay factor {} outside (0, 1]",
                self.decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }

    /// `lr · decay_factor^(number of decay epochs ≤ epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.decay_factor.powi(steps as i32)
    }
}

/// `v ← β·v + g`, then `θ ← θ − η_epoch·v`.
pub fn sgd_momentum_step(
    model: &mut Model,
    grads: &Gradients,
    velocity: &mut Gradients,
    config: &OptimizerConfig,
    epoch: usize,
) -> Result<()> {
    if !grads.matches(model) || !velocity.matches(model) {
        return Err(Error::Shape("gradient or velocity shape does not match the model".into()));
    }
    let lr = config.lr_at(epoch);
    for ((theta, v), g) in model.params_mut().zip(velocity.values_mut()).zip(grads.values()) {
        *v = config.momentum * *v + g;
        *theta -= lr * *v;
    }
    Ok(())
}
