//! Optimizers, the training loop with plateau decay and early stopping,
//! and fine-tuning from a checkpoint.

mod config;
mod fit;
mod optim;

pub use config::{AdamConfig, OptimizerKind, TrainConfig};
pub use fit::{
    cross_entropy, evaluate_loss, finetune, fit, fit_with, read_log, train_step, write_log, FitOutcome, LossStats,
    StopReason, TrainLogRecord, PROB_EPSILON,
};
pub use optim::Optimizer;
