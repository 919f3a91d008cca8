//! Model definitions, losses and objective assembly for neural ODE/SDE training.

mod losses;
mod models;
mod params;
mod spiral;

use thiserror::Error;

use crate::tensor::TensorError;

pub use losses::{cross_entropy_loss, moment_loss, regularized_objective, steer_sample_endtime, RegCoefficients};
pub use models::{
    mlp_ode_layout, sde_classifier_layout, spiral_sde_layout, Layout, MlpOde, ModelKind, SdeClassifier, SpiralSde,
};
pub use params::ParamSet;
pub use spiral::{spiral_truth_simulate, uniform_times, SpiralDataset, SpiralSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
