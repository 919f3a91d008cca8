//! Adaptive Euler-Maruyama integration of diagonal-noise SDEs
//! `dz = f(t, z) dt + g(t, z) dW`.
//!
//! Each attempted step computes one full step and two half steps over the
//! same Brownian increment; their difference drives the same PI controller
//! and regularization accumulators as the ODE solver.

mod brownian;
mod solver;

pub use brownian::{BrownianError, BrownianPath};
pub use solver::{
    em_step_pair, sde_default_config, sde_solve, sde_solve_fixed_steps, sde_solve_with_stops, EmStepPair,
    SdeSolveStats, StartEval,
};
