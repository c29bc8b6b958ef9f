use serde::{Deserialize, Serialize};

use crate::adapter::DEFAULT_REDUCTION;
use crate::entailment::EntailmentConfig;
use crate::exec::Exec;
use crate::manifold::ManifoldConfig;
use crate::regressor::DEFAULT_HIDDEN;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the entailment term.
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub curvature: f64,
    pub k: f64,
    pub contraction: f64,
    pub adapter_reduction: usize,
    pub modnet_hidden: usize,
    #[serde(skip, default)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            lr: 4e-4,
            weight_decay: 0.005,
            batch_size: 8,
            max_epochs: 20,
            lr_step: 10,
            lr_gamma: 0.5,
            patience: 6,
            seed: 0,
            curvature: 1.0,
            k: 0.1,
            contraction: 0.8,
            adapter_reduction: DEFAULT_REDUCTION,
            modnet_hidden: DEFAULT_HIDDEN,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn manifold(&self) -> ManifoldConfig {
        ManifoldConfig {
            curvature: self.curvature,
            ..ManifoldConfig::default()
        }
    }

    pub fn entailment(&self) -> EntailmentConfig {
        EntailmentConfig {
            k: self.k,
            contraction: self.contraction,
            ..EntailmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.manifold().validate()?;
        self.entailment().validate()?;
        let nonneg = [
            ("lambda", self.lambda),
            ("lr", self.lr),
            ("weight decay", self.weight_decay),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::invalid(format!(
                "lr gamma must lie in (0, 1], got {}",
                self.lr_gamma
            )));
        }
        let positive = [
            ("batch size", self.batch_size),
            ("max epochs", self.max_epochs),
            ("lr step", self.lr_step),
            ("patience", self.patience),
            ("adapter reduction", self.adapter_reduction),
            ("modulation hidden width", self.modnet_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_protocol() {
        let c = TrainConfig::default();
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.lr, 4e-4);
        assert_eq!(c.weight_decay, 0.005);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.max_epochs, 20);
        assert_eq!(c.lr_step, 10);
        assert_eq!(c.lr_gamma, 0.5);
        assert_eq!(c.patience, 6);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        let base = TrainConfig::default();
        for bad in [
            TrainConfig {
                patience: 30,
                ..base.clone()
            },
            TrainConfig {
                batch_size: 0,
                ..base.clone()
            },
            TrainConfig {
                curvature: -1.0,
                ..base.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
