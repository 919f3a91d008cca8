use std::cell::Cell;

use super::controller::{error_proportion, propose_step, ErrorNorm, SolverConfig};
use super::tableau::ButcherTableau;
use super::{PartialStats, SolveError, SolveErrorKind};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Right-hand side `dz/dt = f(t, z)` evaluated on a tape.
pub trait Dynamics {
    fn eval(&self, tape: &Tape, t: f64, z: &Var) -> Result<Var, TensorError>;
}

impl<F> Dynamics for F
where
    F: Fn(&Tape, f64, &Var) -> Result<Var, TensorError>,
{
    fn eval(&self, tape: &Tape, t: f64, z: &Var) -> Result<Var, TensorError> {
        self(tape, t, z)
    }
}

/// Cost counters and the differentiable regularization accumulators of a solve.
#[derive(Clone, Debug)]
pub struct SolveStats {
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// `R_E = sum_j E_j |h_j|` over accepted steps.
    pub reg_error: Var,
    /// `R_S = sum_j S_j` over accepted steps.
    pub reg_stiffness: Var,
}

/// One attempted step, kept for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    /// Error proportion; infinite when a stage was non-finite.
    pub q: f64,
    pub accepted: bool,
    /// Stiffness estimate, set on accepted steps.
    pub stiffness: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct OdeSolution<S = SolveStats> {
    /// Accepted times, starting at `t0` and ending at `t1`.
    pub times: Vec<f64>,
    pub states: Vec<Var>,
    pub stats: S,
    pub steps: Vec<StepRecord>,
}

impl<S> OdeSolution<S> {
    pub fn final_state(&self) -> &Var {
        self.states.last().expect("solution has at least the initial state")
    }

    /// State at an accepted time that the solver landed on exactly.
    pub fn state_at(&self, t: f64) -> Option<&Var> {
        self.times.iter().position(|&s| s == t).map(|i| &self.states[i])
    }
}

/// Output of a single Runge-Kutta step.
#[derive(Clone, Debug)]
pub struct RkStep {
    pub z_next: Var,
    /// `h sum_i (b_i - b_tilde_i) k_i`.
    pub err_vec: Var,
    /// Stage derivatives `k_i`.
    pub stages: Vec<Var>,
    /// Arguments `z + h sum_j a_ij k_j` at which each stage was evaluated.
    pub stage_states: Vec<Var>,
}

/// Combines `base + sum_j coefs[j] * ks[j]`, skipping zero coefficients.
fn combine(tape: &Tape, base: Option<&Var>, coefs: &[f64], ks: &[Var]) -> Result<Var, TensorError> {
    let mut c = Vec::with_capacity(coefs.len() + 1);
    let mut xs: Vec<&Var> = Vec::with_capacity(coefs.len() + 1);
    if let Some(b) = base {
        c.push(1.0);
        xs.push(b);
    }
    for (&coef, k) in coefs.iter().zip(ks) {
        if coef != 0.0 {
            c.push(coef);
            xs.push(k);
        }
    }
    if xs.is_empty() {
        return Ok(tape.constant(Tensor::zeros(ks[0].shape())));
    }
    tape.lincomb(&c, &xs)
}

/// One explicit step of size `h` from `(t, z)`.
///
/// `first_stage` supplies `f(t, z)` when it is already known (FSAL reuse or a
/// retry after rejection).
pub fn rk_step<F: Dynamics + ?Sized>(
    tape: &Tape,
    tableau: &ButcherTableau,
    f: &F,
    t: f64,
    z: &Var,
    h: f64,
    first_stage: Option<&Var>,
) -> Result<RkStep, TensorError> {
    let s = tableau.stages();
    let mut stages: Vec<Var> = Vec::with_capacity(s);
    let mut stage_states: Vec<Var> = Vec::with_capacity(s);
    stage_states.push(z.clone());
    stages.push(match first_stage {
        Some(k) => k.clone(),
        None => f.eval(tape, t, z)?,
    });
    for i in 1..s {
        let coefs: Vec<f64> = tableau.a[i].iter().map(|a| h * a).collect();
        let yi = combine(tape, Some(z), &coefs, &stages)?;
        let ki = f.eval(tape, t + tableau.c[i] * h, &yi)?;
        stage_states.push(yi);
        stages.push(ki);
    }
    let z_next = if tableau.is_fsal() {
        stage_states[s - 1].clone()
    } else {
        let coefs: Vec<f64> = tableau.b.iter().map(|b| h * b).collect();
        combine(tape, Some(z), &coefs, &stages)?
    };
    let err_coefs: Vec<f64> = tableau
        .b
        .iter()
        .zip(&tableau.b_tilde)
        .map(|(b, bt)| h * (b - bt))
        .collect();
    let err_vec = combine(tape, None, &err_coefs, &stages)?;
    Ok(RkStep {
        z_next,
        err_vec,
        stages,
        stage_states,
    })
}

/// Stiffness estimate `||k_x - k_y|| / max(||y_x - y_y||, eps)` from the
/// stage pair sharing an abscissa; costs no extra dynamics evaluations.
pub fn stiffness_estimate(
    tape: &Tape,
    stages: &[Var],
    stage_states: &[Var],
    tableau: &ButcherTableau,
    eps: f64,
) -> Result<Var, TensorError> {
    let (x, y) = tableau.stiffness_pair;
    difference_quotient(tape, &stages[x], &stages[y], &stage_states[x], &stage_states[y], eps)
}

pub(crate) fn difference_quotient(
    tape: &Tape,
    fx: &Var,
    fy: &Var,
    zx: &Var,
    zy: &Var,
    eps: f64,
) -> Result<Var, TensorError> {
    let num = tape.distance(fx, fy)?;
    let den = tape.distance(zx, zy)?;
    let floor = tape.constant(Tensor::scalar(eps));
    let den = tape.maximum(&den, &floor)?;
    tape.div(&num, &den)
}

/// Running `sum_j w_j x_j` kept on the tape; `None` until the first term.
pub(crate) struct Accumulator(Option<Var>);

impl Accumulator {
    pub(crate) fn new() -> Self {
        Accumulator(None)
    }

    pub(crate) fn add(&mut self, tape: &Tape, term: &Var, weight: f64) -> Result<(), TensorError> {
        self.0 = Some(match self.0.take() {
            None => tape.scale(term, weight)?,
            Some(acc) => tape.lincomb(&[1.0, weight], &[&acc, term])?,
        });
        Ok(())
    }

    pub(crate) fn value(&self) -> f64 {
        self.0.as_ref().map_or(0.0, Var::item)
    }

    pub(crate) fn finish(self, tape: &Tape) -> Var {
        self.0.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)))
    }
}

pub(crate) fn local_error(
    tape: &Tape,
    q: &Var,
    err_vec: &Var,
    norm: ErrorNorm,
) -> Result<Var, TensorError> {
    match norm {
        ErrorNorm::Scaled => Ok(q.clone()),
        // unit absolute weight and no relative part: plain RMS
        ErrorNorm::Rms => tape.weighted_rms(err_vec, err_vec, err_vec, 1.0, 0.0),
    }
}

/// Sorted interior stop times followed by `t1`.
pub(crate) fn stop_schedule(t0: f64, t1: f64, stops: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = stops.iter().copied().filter(|&s| s > t0 && s < t1).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out.push(t1);
    out
}

struct Loop<'a> {
    tape: &'a Tape,
    calls: &'a Cell<usize>,
    accepted: usize,
    rejected: usize,
    reg_error: Accumulator,
    reg_stiffness: Accumulator,
}

impl Loop<'_> {
    fn partial(&self, t: f64) -> PartialStats {
        PartialStats {
            t,
            nfe: self.calls.get(),
            accepted: self.accepted,
            rejected: self.rejected,
            reg_error: self.reg_error.value(),
            reg_stiffness: self.reg_stiffness.value(),
        }
    }

    fn abort(&self, t: f64, kind: SolveErrorKind) -> SolveError {
        SolveError {
            kind,
            partial: self.partial(t),
        }
    }

    fn finish(self, times: Vec<f64>, states: Vec<Var>, steps: Vec<StepRecord>) -> OdeSolution {
        OdeSolution {
            times,
            states,
            steps,
            stats: SolveStats {
                nfe: self.calls.get(),
                accepted: self.accepted,
                rejected: self.rejected,
                reg_error: self.reg_error.finish(self.tape),
                reg_stiffness: self.reg_stiffness.finish(self.tape),
            },
        }
    }
}

fn check_inputs(z0: &Var, t0: f64, t1: f64) -> Result<(), SolveError> {
    if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
        return Err(SolveError::invalid(format!("need finite t0 < t1, got [{t0}, {t1}]")));
    }
    if !z0.value().all_finite() {
        return Err(SolveError::invalid("initial state is not finite".into()));
    }
    Ok(())
}

/// Adaptive solve over `[t0, t1]`.
pub fn solve<F: Dynamics + ?Sized>(
    tape: &Tape,
    f: &F,
    z0: &Var,
    t0: f64,
    t1: f64,
    tableau: &ButcherTableau,
    config: &SolverConfig,
) -> Result<OdeSolution, SolveError> {
    solve_with_stops(tape, f, z0, t0, t1, &[], tableau, config)
}

/// Adaptive solve that additionally lands exactly on every time in `stops`.
#[allow(clippy::too_many_arguments)]
pub fn solve_with_stops<F: Dynamics + ?Sized>(
    tape: &Tape,
    f: &F,
    z0: &Var,
    t0: f64,
    t1: f64,
    stops: &[f64],
    tableau: &ButcherTableau,
    config: &SolverConfig,
) -> Result<OdeSolution, SolveError> {
    config.validate()?;
    tableau.validate()?;
    check_inputs(z0, t0, t1)?;

    let span = t1 - t0;
    let h_max = config.h_max.unwrap_or(span);
    let mut h = config.h_init.unwrap_or(span / 100.0).min(h_max);
    let schedule = stop_schedule(t0, t1, stops);
    let mut next_stop = 0;

    let calls = Cell::new(0);
    let mut lp = Loop {
        tape,
        calls: &calls,
        accepted: 0,
        rejected: 0,
        reg_error: Accumulator::new(),
        reg_stiffness: Accumulator::new(),
    };
    let counted = |tape: &Tape, t: f64, z: &Var| {
        calls.set(calls.get() + 1);
        f.eval(tape, t, z)
    };

    let mut t = t0;
    let mut z = z0.clone();
    let mut first: Option<Var> = None;
    let mut q_prev = 1.0;
    let mut last_rejected = false;
    let mut times = vec![t0];
    let mut states = vec![z0.clone()];
    let mut steps = Vec::new();

    while next_stop < schedule.len() {
        if lp.accepted + lp.rejected >= config.max_steps {
            return Err(lp.abort(t, SolveErrorKind::MaxSteps(config.max_steps)));
        }
        let target = schedule[next_stop];
        // land on the stop when within 1% of it to avoid a sliver step
        let (h_step, lands) = if t + 1.01 * h >= target {
            (target - t, true)
        } else {
            (h, false)
        };
        if first.is_none() {
            first = Some(counted(tape, t, &z).map_err(|e| lp.abort(t, e.into()))?);
        }

        let step = match rk_step(tape, tableau, &counted, t, &z, h_step, first.as_ref()) {
            Ok(step) => step,
            Err(TensorError::NonFinite { .. }) => {
                lp.rejected += 1;
                steps.push(StepRecord { t, h: h_step, q: f64::INFINITY, accepted: false, stiffness: None });
                if h_step <= config.h_min {
                    return Err(lp.abort(t, SolveErrorKind::MinStep { h: h_step }));
                }
                h = (h_step * config.growth_clamp.0).max(config.h_min);
                last_rejected = true;
                continue;
            }
            Err(e) => return Err(lp.abort(t, e.into())),
        };
        let q = error_proportion(tape, &step.err_vec, &z, &step.z_next, config.atol, config.rtol)
            .map_err(|e| lp.abort(t, e.into()))?;
        let q_val = q.item();

        if q_val < 1.0 {
            let err_j = local_error(tape, &q, &step.err_vec, config.error_norm)
                .map_err(|e| lp.abort(t, e.into()))?;
            let s_j = stiffness_estimate(tape, &step.stages, &step.stage_states, tableau, config.stiffness_eps)
                .map_err(|e| lp.abort(t, e.into()))?;
            lp.reg_error.add(tape, &err_j, h_step.abs()).map_err(|e| lp.abort(t, e.into()))?;
            lp.reg_stiffness.add(tape, &s_j, 1.0).map_err(|e| lp.abort(t, e.into()))?;
            steps.push(StepRecord { t, h: h_step, q: q_val, accepted: true, stiffness: Some(s_j.item()) });
            lp.accepted += 1;

            t = if lands { target } else { t + h_step };
            if lands {
                next_stop += 1;
            }
            z = step.z_next;
            if !z.value().all_finite() {
                return Err(lp.abort(t, SolveErrorKind::NonFiniteState));
            }
            first = if tableau.is_fsal() {
                step.stages.last().cloned()
            } else {
                None
            };
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
        } else {
            lp.rejected += 1;
            steps.push(StepRecord { t, h: h_step, q: q_val, accepted: false, stiffness: None });
            if h_step <= config.h_min {
                return Err(lp.abort(t, SolveErrorKind::MinStep { h: h_step }));
            }
            h = propose_step(q_val, q_prev, h_step, h_max, config);
            last_rejected = true;
        }
    }
    Ok(lp.finish(times, states, steps))
}

/// Solve with a prescribed step sequence; every step is accepted.
///
/// With step sizes frozen from a reference adaptive solve this is the same
/// discrete computation, so its gradients are those of the adaptive solve.
pub fn solve_fixed_steps<F: Dynamics + ?Sized>(
    tape: &Tape,
    f: &F,
    z0: &Var,
    t0: f64,
    step_sizes: &[f64],
    tableau: &ButcherTableau,
    config: &SolverConfig,
) -> Result<OdeSolution, SolveError> {
    config.validate()?;
    tableau.validate()?;
    if step_sizes.is_empty() || step_sizes.iter().any(|h| !(*h > 0.0)) {
        return Err(SolveError::invalid("step sizes must be positive".into()));
    }
    check_inputs(z0, t0, t0 + step_sizes.iter().sum::<f64>())?;
    let calls = Cell::new(0);
    let mut lp = Loop {
        tape,
        calls: &calls,
        accepted: 0,
        rejected: 0,
        reg_error: Accumulator::new(),
        reg_stiffness: Accumulator::new(),
    };
    let counted = |tape: &Tape, t: f64, z: &Var| {
        calls.set(calls.get() + 1);
        f.eval(tape, t, z)
    };
    let mut t = t0;
    let mut z = z0.clone();
    let mut first: Option<Var> = None;
    let mut times = vec![t0];
    let mut states = vec![z0.clone()];
    let mut steps = Vec::new();
    for &h in step_sizes {
        let step = rk_step(tape, tableau, &counted, t, &z, h, first.as_ref())
            .map_err(|e| lp.abort(t, e.into()))?;
        let q = error_proportion(tape, &step.err_vec, &z, &step.z_next, config.atol, config.rtol)
            .map_err(|e| lp.abort(t, e.into()))?;
        let err_j = local_error(tape, &q, &step.err_vec, config.error_norm).map_err(|e| lp.abort(t, e.into()))?;
        let s_j = stiffness_estimate(tape, &step.stages, &step.stage_states, tableau, config.stiffness_eps)
            .map_err(|e| lp.abort(t, e.into()))?;
        lp.reg_error.add(tape, &err_j, h).map_err(|e| lp.abort(t, e.into()))?;
        lp.reg_stiffness.add(tape, &s_j, 1.0).map_err(|e| lp.abort(t, e.into()))?;
        steps.push(StepRecord { t, h, q: q.item(), accepted: true, stiffness: Some(s_j.item()) });
        lp.accepted += 1;
        t += h;
        z = step.z_next;
        first = if tableau.is_fsal() {
            step.stages.last().cloned()
        } else {
            None
        };
        times.push(t);
        states.push(z.clone());
    }
    Ok(lp.finish(times, states, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(tape: &Tape, _t: f64, z: &Var) -> Result<Var, TensorError> {
        tape.scale(z, -1.0)
    }

    fn one(tape: &Tape, v: f64) -> Var {
        tape.var(Tensor::vector(vec![v]))
    }

    #[test]
    fn zero_dynamics_step() {
        let tape = Tape::new();
        let tab = ButcherTableau::dormand_prince();
        let z = tape.var(Tensor::vector(vec![1.5, -2.0]));
        let zero = |tape: &Tape, _t: f64, z: &Var| tape.scale(z, 0.0);
        let step = rk_step(&tape, &tab, &zero, 0.0, &z, 0.3, None).unwrap();
        assert_eq!(step.z_next.value().data(), z.value().data());
        assert!(step.err_vec.value().data().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn constant_dynamics_has_no_error() {
        let tape = Tape::new();
        let tab = ButcherTableau::dormand_prince();
        let z = tape.var(Tensor::vector(vec![0.0, 1.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, -0.7]));
        let constant = move |_: &Tape, _t: f64, _z: &Var| Ok(c.clone());
        let step = rk_step(&tape, &tab, &constant, 0.0, &z, 0.25, None).unwrap();
        // the two weight rows sum to one, so the difference vanishes up to rounding
        assert!(step.err_vec.value().max_abs() <= 1e-16);
        let expected = [0.75, 1.0 - 0.175];
        for (v, e) in step.z_next.value().data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_matches_exponential() {
        let tape = Tape::new();
        let tab = ButcherTableau::dormand_prince();
        let z = one(&tape, 1.0);
        let step = rk_step(&tape, &tab, &decay, 0.0, &z, 0.1, None).unwrap();
        assert!((step.z_next.item() - (-0.1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn constant_dynamics_has_zero_stiffness() {
        let tape = Tape::new();
        let tab = ButcherTableau::dormand_prince();
        let z = one(&tape, 1.0);
        let c = tape.constant(Tensor::vector(vec![2.0]));
        let constant = move |_: &Tape, _t: f64, _z: &Var| Ok(c.clone());
        let step = rk_step(&tape, &tab, &constant, 0.0, &z, 0.1, None).unwrap();
        let s = stiffness_estimate(&tape, &step.stages, &step.stage_states, &tab, 1e-12).unwrap();
        assert_eq!(s.item(), 0.0);
    }

    #[test]
    fn adaptive_decay_to_one() {
        let tape = Tape::new();
        let z0 = one(&tape, 1.0);
        let cfg = SolverConfig::with_tolerances(1.4e-8, 1.4e-8);
        let sol = solve(&tape, &decay, &z0, 0.0, 1.0, &ButcherTableau::dormand_prince(), &cfg).unwrap();
        assert!((sol.final_state().item() - (-1.0f64).exp()).abs() < 1e-7);
        assert_eq!(*sol.times.last().unwrap(), 1.0);
        assert_eq!(sol.times.len(), sol.stats.accepted + 1);
        assert_eq!(sol.stats.nfe, 1 + 6 * (sol.stats.accepted + sol.stats.rejected));
    }

    #[test]
    fn rejects_bad_interval() {
        let tape = Tape::new();
        let z0 = one(&tape, 1.0);
        let err = solve(&tape, &decay, &z0, 1.0, 0.0, &ButcherTableau::dormand_prince(), &SolverConfig::default())
            .unwrap_err();
        assert!(matches!(err.kind, SolveErrorKind::InvalidInput(_)));
    }

    #[test]
    fn max_steps_reports_partial_stats() {
        let tape = Tape::new();
        let z0 = one(&tape, 1.0);
        let cfg = SolverConfig {
            max_steps: 3,
            ..SolverConfig::with_tolerances(1e-12, 1e-12)
        };
        let err = solve(&tape, &decay, &z0, 0.0, 10.0, &ButcherTableau::dormand_prince(), &cfg).unwrap_err();
        assert!(matches!(err.kind, SolveErrorKind::MaxSteps(3)));
        assert_eq!(err.partial.accepted + err.partial.rejected, 3);
        assert!(err.partial.nfe > 0);
    }

    #[test]
    fn min_step_abort() {
        let tape = Tape::new();
        let z0 = one(&tape, 1.0);
        let cfg = SolverConfig {
            h_min: 0.05,
            h_init: Some(0.1),
            ..SolverConfig::with_tolerances(1e-14, 1e-14)
        };
        let fast = |tape: &Tape, _t: f64, z: &Var| tape.scale(z, -50.0);
        let err = solve(&tape, &fast, &z0, 0.0, 1.0, &ButcherTableau::dormand_prince(), &cfg).unwrap_err();
        assert!(matches!(err.kind, SolveErrorKind::MinStep { .. }));
    }

    #[test]
    fn stops_are_hit_exactly() {
        let tape = Tape::new();
        let z0 = one(&tape, 1.0);
        let stops: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let sol = solve_with_stops(
            &tape,
            &decay,
            &z0,
            0.0,
            1.0,
            &stops,
            &ButcherTableau::dormand_prince(),
            &SolverConfig::default(),
        )
        .unwrap();
        for s in &stops {
            let v = sol.state_at(*s).expect("stop reached");
            assert!((v.item() - (-s).exp()).abs() < 1e-5);
        }
    }

    #[test]
    fn non_finite_stage_counts_as_rejection() {
        let tape = Tape::new();
        let z0 = one(&tape, 1.0);
        // every stage past t = 0.5 is non-finite, so the solver shrinks until h_min
        let f = |tape: &Tape, t: f64, z: &Var| {
            if t > 0.5 {
                tape.pow(&tape.scale(z, 0.0)?, -1.0)
            } else {
                tape.scale(z, -1.0)
            }
        };
        let cfg = SolverConfig {
            h_min: 1e-6,
            ..SolverConfig::default()
        };
        let err = solve(&tape, &f, &z0, 0.0, 1.0, &ButcherTableau::dormand_prince(), &cfg).unwrap_err();
        assert!(matches!(err.kind, SolveErrorKind::MinStep { .. }));
        assert!(err.partial.rejected > 0);
        assert!(err.partial.t <= 0.5);
    }
}
