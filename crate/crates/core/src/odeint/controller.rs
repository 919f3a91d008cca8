use super::SolveError;
use crate::tensor::{Tape, TensorError, Var};

/// How the per-step local error `E_j` entering the error regularizer is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ErrorNorm {
    /// Tolerance-scaled RMS norm, i.e. the error proportion `q_j` itself.
    #[default]
    Scaled,
    /// Plain RMS norm of the embedded error vector.
    Rms,
}

/// Tolerances and step-size controller settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub atol: f64,
    pub rtol: f64,
    /// Safety factor.
    pub eta: f64,
    /// PI gain on the previous error proportion.
    pub alpha: f64,
    /// PI gain on the current error proportion.
    pub beta: f64,
    /// Initial step; `None` means a hundredth of the integration span.
    pub h_init: Option<f64>,
    pub h_min: f64,
    /// Largest step; `None` means the whole span.
    pub h_max: Option<f64>,
    /// Limit on attempted (accepted + rejected) steps.
    pub max_steps: usize,
    /// Bounds on the ratio `h_new / h`.
    pub growth_clamp: (f64, f64),
    pub error_norm: ErrorNorm,
    /// Floor on the stiffness quotient's denominator.
    pub stiffness_eps: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            atol: 1e-6,
            rtol: 1e-6,
            eta: 0.9,
            alpha: 0.4 / 5.0,
            beta: -0.7 / 5.0,
            h_init: None,
            h_min: 1e-14,
            h_max: None,
            max_steps: 100_000,
            growth_clamp: (0.2, 10.0),
            error_norm: ErrorNorm::Scaled,
            stiffness_eps: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerances(atol: f64, rtol: f64) -> Self {
        SolverConfig {
            atol,
            rtol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let fail = |m: &str| Err(SolveError::invalid(m.to_string()));
        if !(self.atol > 0.0 && self.rtol > 0.0) {
            return fail("atol and rtol must be positive");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return fail("safety factor must lie in (0, 1]");
        }
        if !(self.h_min >= 0.0) {
            return fail("h_min must be non-negative");
        }
        if let Some(h_max) = self.h_max {
            if !(self.h_min < h_max) {
                return fail("h_min must be below h_max");
            }
        }
        if let Some(h0) = self.h_init {
            if !(h0 > 0.0) {
                return fail("h_init must be positive");
            }
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive");
        }
        let (lo, hi) = self.growth_clamp;
        if !(lo > 0.0 && lo < 1.0 && hi > 1.0) {
            return fail("growth clamp must satisfy 0 < min < 1 < max");
        }
        if !(self.stiffness_eps > 0.0) {
            return fail("stiffness_eps must be positive");
        }
        Ok(())
    }
}

/// Error proportion `q = RMS_i( err_i / (atol + max(|z_i|, |z_next_i|) rtol) )`.
///
/// A step is acceptable iff `q < 1`.
pub fn error_proportion(
    tape: &Tape,
    err_vec: &Var,
    z: &Var,
    z_next: &Var,
    atol: f64,
    rtol: f64,
) -> Result<Var, TensorError> {
    tape.weighted_rms(err_vec, z, z_next, atol, rtol)
}

/// PI proposal `h_new = clamp(eta q_prev^alpha q_now^beta) h`, bounded to
/// `[h_min, h_max]`.
pub fn propose_step(q_now: f64, q_prev: f64, h: f64, h_max: f64, config: &SolverConfig) -> f64 {
    let (lo, hi) = config.growth_clamp;
    // previous proportion floored as in Hairer's DOPRI5
    let q_prev = q_prev.max(1e-4);
    let raw = config.eta * q_prev.powf(config.alpha) * q_now.powf(config.beta);
    let factor = if raw.is_nan() { lo } else { raw.clamp(lo, hi) };
    (factor * h).clamp(config.h_min, h_max)
}
