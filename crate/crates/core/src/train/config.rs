use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_decay_factor: f64,
    /// Non-improving epochs before the learning rate is decayed.
    pub plateau_patience: usize,
    /// Non-improving epochs before training stops.
    pub early_stop_patience: usize,
    /// Smallest decrease of the validation loss that counts as improvement.
    pub min_delta: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    /// Moving-average factor of RMSprop.
    pub rho: f64,
    pub seed: u64,
    /// Weight of each pooling auxiliary loss; 0 disables them.
    pub aux_loss_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr_init: 1e-3,
            lr_min: 1e-6,
            lr_decay_factor: 0.1,
            plateau_patience: 2,
            early_stop_patience: 3,
            min_delta: 0.0,
            epochs: 10,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            rho: 0.9,
            seed: 0,
            aux_loss_weight: 1.0,
        }
    }
}

impl TrainConfig {
    /// Schedule used when adapting a pretrained model to one dataset.
    pub fn finetune() -> Self {
        TrainConfig {
            epochs: 50,
            early_stop_patience: 5,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return bad(format!(
                "need 0 < lr_min <= lr_init, got lr_min={} lr_init={}",
                self.lr_min, self.lr_init
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad(format!("lr_decay_factor must lie in (0, 1), got {}", self.lr_decay_factor));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be at least 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta must be >= 0, got {}", self.min_delta));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return bad(format!("invalid adam settings {a:?}"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.aux_loss_weight >= 0.0 && self.aux_loss_weight.is_finite()) {
            return bad(format!("aux_loss_weight must be >= 0, got {}", self.aux_loss_weight));
        }
        Ok(())
    }
}
