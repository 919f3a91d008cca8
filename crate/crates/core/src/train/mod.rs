//! Optimizers, coefficient schedules and the training loop.

mod config;
mod data;
mod optim;
mod run;
mod schedule;

use thiserror::Error;

use crate::nde::NdeError;
use crate::odeint::SolveError;
use crate::tensor::TensorError;

pub use config::{Experiment, Regularization, TrainConfig};
pub use data::{ImageDataset, TrainData};
pub use optim::{OptimizerKind, OptimizerState};
pub use run::{
    count_correct, model_kind, spiral_data, train_run, train_run_with, EpochMetrics, Evaluation, IterationMetrics,
    TrainOutcome,
};
pub use schedule::anneal_coefficient;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("{context}: {source}")]
    Context { context: String, source: Box<TrainError> },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Nde(#[from] NdeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl TrainError {
    pub fn context(self, context: String) -> Self {
        TrainError::Context {
            context,
            source: Box::new(self),
        }
    }
}
