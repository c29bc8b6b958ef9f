use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::{evaluate, loss_and_gradients};
use super::{adamw_step, lr_at_epoch, OptimizerState, ParameterSet, TrainConfig};
use crate::data::{Dataset, Sample};
use crate::{Error, Result};

/// Smallest validation SRCC gain that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// Patience-based stopping on a maximized metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            min_delta: MIN_IMPROVEMENT,
            best: None,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Record the metric for `epoch`. NaN never counts as an improvement.
    pub fn observe(&mut self, epoch: usize, value: f64) -> Observation {
        let improved = !value.is_nan()
            && match self.best {
                None => true,
                Some(b) => value > b + self.min_delta,
            };
        if improved {
            self.best = Some(value);
            self.best_epoch = Some(epoch);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Observation {
            improved,
            stop: self.stale >= self.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_reg: f64,
    pub loss_entail: f64,
    pub val_srcc: f64,
    pub val_plcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_srcc: f64,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.records.len()
    }
}

/// Train from a seeded initialization and return the parameters of the epoch
/// with the best validation SRCC.
///
/// Losses in the history are sample-weighted means over each epoch. If no
/// epoch produces a defined validation SRCC the final parameters are
/// returned.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ParameterSet, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if val_set.len() < 2 {
        return Err(Error::invalid(format!(
            "validation set needs at least 2 samples, got {}",
            val_set.len()
        )));
    }
    if train_set.dim != val_set.dim {
        return Err(Error::invalid(format!(
            "train dimension {} differs from validation dimension {}",
            train_set.dim, val_set.dim
        )));
    }
    if let Some(i) = train_set.samples.iter().position(|s| !s.has_score()) {
        return Err(Error::Data {
            index: i,
            message: "training sample has no score".into(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParameterSet::init(
        train_set.dim,
        cfg.adapter_reduction,
        cfg.modnet_hidden,
        &mut rng,
    );
    let mut flat = params.flatten();
    let mut opt = OptimizerState::new(flat.len());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut records = Vec::with_capacity(cfg.max_epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at_epoch(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_reg, mut sum_entail) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let (loss, grad) = loss_and_gradients(&batch, &params, cfg)?;
            let w = batch.len() as f64;
            sum_total += loss.total * w;
            sum_reg += loss.reg * w;
            sum_entail += loss.entail * w;
            adamw_step(&mut flat, &grad.flatten(), &mut opt, lr, cfg.weight_decay)?;
            params.assign_flat(&flat)?;
        }
        let n = train_set.len() as f64;
        let (val_srcc, val_plcc) = match evaluate(val_set, &params, cfg) {
            Ok(ev) => (ev.report.srcc, ev.report.plcc),
            Err(Error::UndefinedMetric(_)) => (f64::NAN, f64::NAN),
            Err(e) => return Err(e),
        };
        records.push(EpochRecord {
            epoch,
            lr,
            loss_total: sum_total / n,
            loss_reg: sum_reg / n,
            loss_entail: sum_entail / n,
            val_srcc,
            val_plcc,
        });
        let obs = stopper.observe(epoch, val_srcc);
        if obs.improved {
            best = params.clone();
        }
        if obs.stop {
            break;
        }
    }

    let history = TrainHistory {
        records,
        best_epoch: stopper.best_epoch,
        best_val_srcc: stopper.best.unwrap_or(f64::NAN),
    };
    if stopper.best.is_none() {
        best = params;
    }
    Ok((best, history))
}
