//! Differentiable adaptive ODE and SDE solvers whose local-error and
//! stiffness estimates are exposed as differentiable training regularizers.

pub mod cli;
pub mod nde;
pub mod odeint;
pub mod sdeint;
pub mod tensor;
pub mod train;
