//! Joint optimization of the feature scalers, adapters and modulation
//! network.
//!
//! The objective per batch is `mean |s_hat - score| + lambda * mean hinge`,
//! where the hinge is the score-contracted entailment loss. Gradients come
//! from hand-written reverse-mode derivatives of every pipeline stage
//! ([`pipeline`]); AdamW with a step schedule updates the flattened
//! [`ParameterSet`]; training keeps the epoch with the best validation SRCC.

mod config;
mod optim;
mod params;
pub mod pipeline;
mod trainer;

pub use config::TrainConfig;
pub use optim::{adamw_step, lr_at_epoch, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{ParameterSet, SEGMENT_NAMES};
pub use pipeline::{
    evaluate, forward_batch, gradients, loss_and_gradients, predict, BatchLoss, Evaluation,
    SampleGeometry,
};
pub use trainer::{train, EarlyStopping, EpochRecord, Observation, TrainHistory};
