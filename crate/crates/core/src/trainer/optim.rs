use serde::{Deserialize, Serialize};

use super::network::{NetworkParams, Tensors};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub weight_decay_enabled: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 2e-4,
            weight_decay_enabled: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be finite and nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// SGD with momentum:
///
/// ```text
/// v ← μ·v + g (+ λ·θ when weight decay is enabled)
/// θ ← θ − η·v
/// ```
///
/// followed by renormalizing the class-weight rows.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub weight_decay_enabled: bool,
    pub velocity: Tensors,
    pub steps: usize,
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig, params: &NetworkParams) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            weight_decay_enabled: cfg.weight_decay_enabled,
            velocity: params.tensors.zeros_like(),
            steps: 0,
        })
    }

    pub fn apply(&mut self, params: &mut NetworkParams, grads: &Tensors) {
        self.velocity.scale(self.momentum);
        self.velocity.axpy(1.0, grads);
        if self.weight_decay_enabled && self.weight_decay > 0.0 {
            self.velocity.axpy(self.weight_decay, &params.tensors);
        }
        self.steps += 1;
        if self.learning_rate == 0.0 {
            return;
        }
        params.tensors.axpy(-self.learning_rate, &self.velocity);
        params.tensors.normalize_class_rows();
    }
}
