use std::cell::Cell;

use super::brownian::BrownianPath;
use crate::odeint::{
    difference_quotient, error_proportion, local_error, propose_step, stop_schedule, Accumulator, Dynamics,
    OdeSolution, PartialStats, SolveError, SolveErrorKind, SolverConfig, StepRecord,
};
use crate::tensor::{Tape, TensorError, Var};

/// Counters and regularization accumulators of an SDE solve.
#[derive(Clone, Debug)]
pub struct SdeSolveStats {
    /// Drift plus diffusion evaluations.
    pub nfe: usize,
    pub nfe_drift: usize,
    pub nfe_diffusion: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub reg_error: Var,
    pub reg_stiffness: Var,
}

/// Coarse and fine Euler-Maruyama results over one step of size `h`.
#[derive(Clone, Debug)]
pub struct EmStepPair {
    pub z_coarse: Var,
    pub z_fine: Var,
    /// `z_fine - z_coarse`.
    pub err_vec: Var,
    /// State after the first half step.
    pub z_mid: Var,
    pub drift_start: Var,
    pub drift_mid: Var,
}

/// Drift and diffusion at the start of a step, reused across retries.
#[derive(Clone, Debug)]
pub struct StartEval {
    pub drift: Var,
    pub diffusion: Var,
}

/// Euler-Maruyama update `z + h f + g * dW`.
fn em_update(tape: &Tape, z: &Var, drift: &Var, diffusion: &Var, h: f64, dw: &Var) -> Result<Var, TensorError> {
    let moved = tape.add(z, &tape.scale(drift, h)?)?;
    tape.add(&moved, &tape.mul(diffusion, dw)?)
}

fn noise_err(e: super::BrownianError) -> TensorError {
    TensorError::InvalidArgument(e.to_string())
}

/// Step pair over `[t, t_end]` with `t_mid` as the bridge point; `start` holds
/// `f(t, z)` and `g(t, z)`. Both half steps use exactly `(t_end - t) / 2`.
#[allow(clippy::too_many_arguments)]
fn step_pair_between<F: Dynamics + ?Sized, G: Dynamics + ?Sized>(
    tape: &Tape,
    f: &F,
    g: &G,
    t: f64,
    t_mid: f64,
    t_end: f64,
    z: &Var,
    start: &StartEval,
    path: &mut BrownianPath,
) -> Result<EmStepPair, TensorError> {
    let h = t_end - t;
    let dw = tape.constant(path.increment_between(t, t_end).map_err(noise_err)?);
    let dw1 = tape.constant(path.increment_between(t, t_mid).map_err(noise_err)?);
    let dw2 = tape.constant(path.increment_between(t_mid, t_end).map_err(noise_err)?);
    if start.diffusion.shape() != z.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "diffusion",
            shapes: vec![z.shape().to_vec(), start.diffusion.shape().to_vec()],
        });
    }
    let z_coarse = em_update(tape, z, &start.drift, &start.diffusion, h, &dw)?;
    let half = h / 2.0;
    let z_mid = em_update(tape, z, &start.drift, &start.diffusion, half, &dw1)?;
    let drift_mid = f.eval(tape, t_mid, &z_mid)?;
    let diffusion_mid = g.eval(tape, t_mid, &z_mid)?;
    let z_fine = em_update(tape, &z_mid, &drift_mid, &diffusion_mid, half, &dw2)?;
    let err_vec = tape.sub(&z_fine, &z_coarse)?;
    Ok(EmStepPair {
        z_coarse,
        z_fine,
        err_vec,
        z_mid,
        drift_start: start.drift.clone(),
        drift_mid,
    })
}

/// One Euler-Maruyama step of size `h` alongside two half steps driven by the
/// bridge-split halves of the same increment.
pub fn em_step_pair<F: Dynamics + ?Sized, G: Dynamics + ?Sized>(
    tape: &Tape,
    f: &F,
    g: &G,
    t: f64,
    z: &Var,
    h: f64,
    path: &mut BrownianPath,
) -> Result<EmStepPair, TensorError> {
    if !(h > 0.0) {
        return Err(TensorError::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    let start = StartEval {
        drift: f.eval(tape, t, z)?,
        diffusion: g.eval(tape, t, z)?,
    };
    step_pair_between(tape, f, g, t, t + h / 2.0, t + h, z, &start, path)
}

struct Counters<'a> {
    drift: &'a Cell<usize>,
    diffusion: &'a Cell<usize>,
    accepted: usize,
    rejected: usize,
    reg_error: Accumulator,
    reg_stiffness: Accumulator,
}

impl Counters<'_> {
    fn abort(&self, t: f64, kind: SolveErrorKind) -> SolveError {
        SolveError {
            kind,
            partial: PartialStats {
                t,
                nfe: self.drift.get() + self.diffusion.get(),
                accepted: self.accepted,
                rejected: self.rejected,
                reg_error: self.reg_error.value(),
                reg_stiffness: self.reg_stiffness.value(),
            },
        }
    }

    fn finish(self, tape: &Tape) -> SdeSolveStats {
        SdeSolveStats {
            nfe: self.drift.get() + self.diffusion.get(),
            nfe_drift: self.drift.get(),
            nfe_diffusion: self.diffusion.get(),
            accepted: self.accepted,
            rejected: self.rejected,
            reg_error: self.reg_error.finish(tape),
            reg_stiffness: self.reg_stiffness.finish(tape),
        }
    }
}

/// Controller settings suited to the first-order step-doubling estimate.
pub fn sde_default_config() -> SolverConfig {
    SolverConfig {
        atol: 1e-2,
        rtol: 1e-2,
        alpha: 0.2,
        beta: -0.35,
        ..SolverConfig::default()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sde_solve<F: Dynamics + ?Sized, G: Dynamics + ?Sized>(
    tape: &Tape,
    f: &F,
    g: &G,
    z0: &Var,
    t0: f64,
    t1: f64,
    config: &SolverConfig,
    path: &mut BrownianPath,
) -> Result<OdeSolution<SdeSolveStats>, SolveError> {
    sde_solve_with_stops(tape, f, g, z0, t0, t1, &[], config, path)
}

/// Adaptive step-doubling Euler-Maruyama solve that lands on every stop.
///
/// A step is accepted when the error proportion of `z_fine - z_coarse` is
/// below one and advances with `z_fine`. A rejected step is retried with half
/// the size, so the retry's endpoint is the previous attempt's midpoint and
/// its noise is the already-sampled half increment.
#[allow(clippy::too_many_arguments)]
pub fn sde_solve_with_stops<F: Dynamics + ?Sized, G: Dynamics + ?Sized>(
    tape: &Tape,
    f: &F,
    g: &G,
    z0: &Var,
    t0: f64,
    t1: f64,
    stops: &[f64],
    config: &SolverConfig,
    path: &mut BrownianPath,
) -> Result<OdeSolution<SdeSolveStats>, SolveError> {
    config.validate()?;
    if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
        return Err(SolveError::invalid(format!("need finite t0 < t1, got [{t0}, {t1}]")));
    }
    if !z0.value().all_finite() {
        return Err(SolveError::invalid("initial state is not finite".into()));
    }
    if path.shape() != z0.shape() {
        return Err(SolveError::invalid(format!(
            "Brownian path shape {:?} does not match state shape {:?}",
            path.shape(),
            z0.shape()
        )));
    }

    let span = t1 - t0;
    let h_max = config.h_max.unwrap_or(span);
    let mut h = config.h_init.unwrap_or(span / 100.0).min(h_max);
    let schedule = stop_schedule(t0, t1, stops);
    let mut next_stop = 0;

    let drift_calls = Cell::new(0);
    let diffusion_calls = Cell::new(0);
    let mut ct = Counters {
        drift: &drift_calls,
        diffusion: &diffusion_calls,
        accepted: 0,
        rejected: 0,
        reg_error: Accumulator::new(),
        reg_stiffness: Accumulator::new(),
    };
    let drift = |tape: &Tape, t: f64, z: &Var| {
        drift_calls.set(drift_calls.get() + 1);
        f.eval(tape, t, z)
    };
    let diffusion = |tape: &Tape, t: f64, z: &Var| {
        diffusion_calls.set(diffusion_calls.get() + 1);
        g.eval(tape, t, z)
    };

    let mut t = t0;
    let mut z = z0.clone();
    let mut start: Option<StartEval> = None;
    let mut q_prev = 1.0;
    let mut last_rejected = false;
    let mut times = vec![t0];
    let mut states = vec![z0.clone()];
    let mut steps = Vec::new();

    while next_stop < schedule.len() {
        if ct.accepted + ct.rejected >= config.max_steps {
            return Err(ct.abort(t, SolveErrorKind::MaxSteps(config.max_steps)));
        }
        let target = schedule[next_stop];
        let (t_end, lands) = if t + 1.01 * h >= target {
            (target, true)
        } else {
            (t + h, false)
        };
        let h_step = t_end - t;
        let t_mid = t + h_step / 2.0;
        if start.is_none() {
            let drift0 = drift(tape, t, &z).map_err(|e| ct.abort(t, e.into()))?;
            let diffusion0 = diffusion(tape, t, &z).map_err(|e| ct.abort(t, e.into()))?;
            start = Some(StartEval {
                drift: drift0,
                diffusion: diffusion0,
            });
        }
        let pair = step_pair_between(
            tape,
            &drift,
            &diffusion,
            t,
            t_mid,
            t_end,
            &z,
            start.as_ref().expect("start evaluated above"),
            path,
        );
        let q = match pair {
            Ok(pair) => match error_proportion(tape, &pair.err_vec, &z, &pair.z_fine, config.atol, config.rtol) {
                Ok(q) => Ok((pair, q)),
                Err(TensorError::NonFinite { .. }) => Err(None),
                Err(e) => Err(Some(e)),
            },
            Err(TensorError::NonFinite { .. }) => Err(None),
            Err(e) => Err(Some(e)),
        };
        let accepted = match q {
            Ok((pair, q)) if q.item() < 1.0 => Some((pair, q)),
            Ok((_, q)) => {
                steps.push(StepRecord { t, h: h_step, q: q.item(), accepted: false, stiffness: None });
                None
            }
            Err(None) => {
                steps.push(StepRecord { t, h: h_step, q: f64::INFINITY, accepted: false, stiffness: None });
                None
            }
            Err(Some(e)) => return Err(ct.abort(t, e.into())),
        };

        match accepted {
            Some((pair, q)) => {
                let q_val = q.item();
                let err_j = local_error(tape, &q, &pair.err_vec, config.error_norm)
                    .map_err(|e| ct.abort(t, e.into()))?;
                let s_j = difference_quotient(
                    tape,
                    &pair.drift_mid,
                    &pair.drift_start,
                    &pair.z_mid,
                    &z,
                    config.stiffness_eps,
                )
                .map_err(|e| ct.abort(t, e.into()))?;
                ct.reg_error.add(tape, &err_j, h_step).map_err(|e| ct.abort(t, e.into()))?;
                ct.reg_stiffness.add(tape, &s_j, 1.0).map_err(|e| ct.abort(t, e.into()))?;
                steps.push(StepRecord { t, h: h_step, q: q_val, accepted: true, stiffness: Some(s_j.item()) });
                ct.accepted += 1;

                t = t_end;
                if lands {
                    next_stop += 1;
                }
                z = pair.z_fine;
                start = None;
                times.push(t);
                states.push(z.clone());

                let mut h_new = propose_step(q_val, q_prev, h_step, h_max, config);
                if last_rejected {
                    h_new = h_new.min(h_step);
                }
                if lands && h_step < h {
                    h_new = h_new.max(h).min(h_max);
                }
                h = h_new;
                q_prev = q_val;
                last_rejected = false;
            }
            None => {
                ct.rejected += 1;
                if h_step <= config.h_min {
                    return Err(ct.abort(t, SolveErrorKind::MinStep { h: h_step }));
                }
                h = h_step / 2.0;
                last_rejected = true;
            }
        }
    }
    Ok(OdeSolution {
        times,
        states,
        steps,
        stats: ct.finish(tape),
    })
}

/// Solve with a prescribed step sequence; every step is accepted.
#[allow(clippy::too_many_arguments)]
pub fn sde_solve_fixed_steps<F: Dynamics + ?Sized, G: Dynamics + ?Sized>(
    tape: &Tape,
    f: &F,
    g: &G,
    z0: &Var,
    t0: f64,
    step_ends: &[f64],
    config: &SolverConfig,
    path: &mut BrownianPath,
) -> Result<OdeSolution<SdeSolveStats>, SolveError> {
    config.validate()?;
    let mut prev = t0;
    for &e in step_ends {
        if !(e > prev) {
            return Err(SolveError::invalid("step end times must increase from t0".into()));
        }
        prev = e;
    }
    let drift_calls = Cell::new(0);
    let diffusion_calls = Cell::new(0);
    let mut ct = Counters {
        drift: &drift_calls,
        diffusion: &diffusion_calls,
        accepted: 0,
        rejected: 0,
        reg_error: Accumulator::new(),
        reg_stiffness: Accumulator::new(),
    };
    let drift = |tape: &Tape, t: f64, z: &Var| {
        drift_calls.set(drift_calls.get() + 1);
        f.eval(tape, t, z)
    };
    let diffusion = |tape: &Tape, t: f64, z: &Var| {
        diffusion_calls.set(diffusion_calls.get() + 1);
        g.eval(tape, t, z)
    };
    let mut t = t0;
    let mut z = z0.clone();
    let mut times = vec![t0];
    let mut states = vec![z0.clone()];
    let mut steps = Vec::new();
    for &t_end in step_ends {
        let h = t_end - t;
        let mut run = |ct: &Counters| -> Result<(EmStepPair, Var, Var, Var), SolveError> {
            let wrap = |e: TensorError| ct.abort(t, e.into());
            let start = StartEval {
                drift: drift(tape, t, &z).map_err(wrap)?,
                diffusion: diffusion(tape, t, &z).map_err(wrap)?,
            };
            let pair = step_pair_between(tape, &drift, &diffusion, t, t + h / 2.0, t_end, &z, &start, path)
                .map_err(wrap)?;
            let q = error_proportion(tape, &pair.err_vec, &z, &pair.z_fine, config.atol, config.rtol).map_err(wrap)?;
            let err_j = local_error(tape, &q, &pair.err_vec, config.error_norm).map_err(wrap)?;
            let s_j = difference_quotient(tape, &pair.drift_mid, &pair.drift_start, &pair.z_mid, &z, config.stiffness_eps)
                .map_err(wrap)?;
            Ok((pair, q, err_j, s_j))
        };
        let (pair, q, err_j, s_j) = run(&ct)?;
        ct.reg_error.add(tape, &err_j, h).map_err(|e| ct.abort(t, e.into()))?;
        ct.reg_stiffness.add(tape, &s_j, 1.0).map_err(|e| ct.abort(t, e.into()))?;
        steps.push(StepRecord { t, h, q: q.item(), accepted: true, stiffness: Some(s_j.item()) });
        ct.accepted += 1;
        t = t_end;
        z = pair.z_fine;
        times.push(t);
        states.push(z.clone());
    }
    Ok(OdeSolution {
        times,
        states,
        steps,
        stats: ct.finish(tape),
    })
}
