//! Adaptive embedded Runge-Kutta integration with PI step control.
//!
//! Besides the trajectory, every solve returns the accumulated local-error
//! (`R_E`) and stiffness (`R_S`) estimates as tape variables, so they can be
//! added to a training objective and differentiated like any other output.
//! Step sizes and accept/reject decisions are plain `f64` controls; gradients
//! flow through the stages, not through the controller.

mod controller;
mod solver;
mod tableau;

use thiserror::Error;

use crate::tensor::TensorError;

pub use controller::{error_proportion, propose_step, ErrorNorm, SolverConfig};
pub(crate) use solver::{difference_quotient, local_error, stop_schedule, Accumulator};
pub use solver::{
    rk_step, solve, solve_fixed_steps, solve_with_stops, stiffness_estimate, Dynamics, OdeSolution, RkStep,
    SolveStats, StepRecord,
};
pub use tableau::ButcherTableau;

/// Counters at the moment a solve aborted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartialStats {
    pub t: f64,
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub reg_error: f64,
    pub reg_stiffness: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveErrorKind {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("maximum number of steps ({0}) exceeded")]
    MaxSteps(usize),
    #[error("minimum step size reached (h = {h:e})")]
    MinStep { h: f64 },
    #[error("state became non-finite")]
    NonFiniteState,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{kind} at t = {} after {} accepted / {} rejected steps, nfe {}",
    partial.t, partial.accepted, partial.rejected, partial.nfe)]
pub struct SolveError {
    pub kind: SolveErrorKind,
    pub partial: PartialStats,
}

impl SolveError {
    pub(crate) fn invalid(msg: String) -> Self {
        SolveError {
            kind: SolveErrorKind::InvalidInput(msg),
            partial: PartialStats::default(),
        }
    }
}
