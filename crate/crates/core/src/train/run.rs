use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Experiment, TrainConfig};
use super::data::{ImageDataset, TrainData};
use super::optim::OptimizerState;
use super::TrainError;
use crate::nde::{
    cross_entropy_loss, moment_loss, regularized_objective, spiral_truth_simulate, steer_sample_endtime, MlpOde,
    ModelKind, ParamSet, SdeClassifier, SpiralDataset, SpiralSde,
};
use crate::odeint::{solve, solve_with_stops, ButcherTableau, SolverConfig};
use crate::sdeint::{sde_solve, sde_solve_with_stops, BrownianPath};
use crate::tensor::{Tape, Tensor, Var};

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_STEER: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_EVAL: u64 = 4;
const STREAM_DATA: u64 = 5;

/// Independent generator for one purpose (initialization, shuffling, ...).
fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub epoch: usize,
    pub iteration: usize,
    pub end_time: f64,
    pub task_loss: f64,
    pub objective: f64,
    pub accuracy: Option<f64>,
    pub nfe: f64,
    pub reg_error: f64,
    pub reg_stiffness: f64,
}

/// Averages over the optimizer steps of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task_loss: f64,
    pub accuracy: Option<f64>,
    pub mean_nfe: f64,
    pub reg_error_value: f64,
    pub reg_stiffness_value: f64,
    pub lambda_error: f64,
    pub lambda_stiffness: f64,
    pub wall_seconds: f64,
}

/// Metrics of the trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `accuracy`, `moment_loss` or `squared_error`.
    pub metric: &'static str,
    pub train_metric: f64,
    pub test_metric: Option<f64>,
    /// Mean NFE per prediction solve.
    pub prediction_nfe: f64,
    /// Wall time of predicting the test set, or of all spiral evaluation draws.
    pub prediction_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochMetrics>,
    pub iterations: Vec<IterationMetrics>,
    pub params: ParamSet,
    pub evaluation: Evaluation,
    pub train_seconds: f64,
}

/// Result of one forward pass.
struct Forward {
    task: Var,
    reg_error: Var,
    reg_stiffness: Var,
    nfe: f64,
    correct: Option<usize>,
}

/// Reference trajectories for the spiral experiments, drawn from the data stream.
pub fn spiral_data(config: &TrainConfig) -> Result<SpiralDataset, TrainError> {
    let seed = rng_stream(config.seed, STREAM_DATA).next_u64();
    Ok(spiral_truth_simulate(
        &config.spiral,
        config.spiral_data_trajectories,
        config.spiral_points,
        seed,
    )?)
}

pub fn model_kind(experiment: Experiment) -> ModelKind {
    match experiment {
        Experiment::MnistNode => ModelKind::MlpOde,
        Experiment::MnistNsde => ModelKind::SdeClassifier,
        Experiment::SpiralSde | Experiment::SpiralOde => ModelKind::SpiralSde,
    }
}

pub fn train_run(config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome, TrainError> {
    train_run_with(config, data, |_| {})
}

/// [`train_run`] with a callback after every epoch.
pub fn train_run_with(
    config: &TrainConfig,
    data: &TrainData,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let task = Task::new(config, data)?;

    let mut params = model_kind(config.experiment).init(&mut rng_stream(config.seed, STREAM_INIT));
    let mut optimizer = OptimizerState::new(config.optimizer, config.learning_rate, config.lr_decay, &params)?;
    let mut shuffle_rng = rng_stream(config.seed, STREAM_SHUFFLE);
    let mut steer_rng = rng_stream(config.seed, STREAM_STEER);
    let mut noise_rng = rng_stream(config.seed, STREAM_NOISE);

    let started = Instant::now();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut iterations = Vec::new();
    for epoch_index in 0..config.epochs {
        let epoch_started = Instant::now();
        let coeffs = config.coefficients(epoch_index);
        let batches = task.batches(&mut shuffle_rng, config.batch_size);
        let first = iterations.len();
        let (mut correct, mut seen) = (0usize, 0usize);
        for (b, rows) in batches.iter().enumerate() {
            let context = || format!("epoch {} batch {}", epoch_index + 1, b + 1);
            let end_time = if config.regularization.uses_steer() {
                steer_sample_endtime(config.end_time, config.steer_half_width, &mut steer_rng)?
            } else {
                config.end_time
            };
            let noise_seed = noise_rng.next_u64();

            let tape = Tape::new();
            let vars = params.bind(&tape);
            let out = task
                .forward(&tape, &vars, rows, end_time, noise_seed)
                .map_err(|e| e.context(context()))?;
            let objective = regularized_objective(&tape, &out.task, &out.reg_error, &out.reg_stiffness, &coeffs)?;
            let grads = tape.grad(&objective).map_err(|e| TrainError::from(e).context(context()))?;
            let grads: Vec<Tensor> = vars.iter().map(|v| grads.wrt(v)).collect();
            optimizer
                .step(&mut params, &grads)
                .map_err(|e| e.context(context()))?;

            let accuracy = out.correct.map(|c| {
                correct += c;
                seen += rows.len();
                c as f64 / rows.len() as f64
            });
            iterations.push(IterationMetrics {
                epoch: epoch_index + 1,
                iteration: iterations.len() + 1,
                end_time,
                task_loss: out.task.item(),
                objective: objective.item(),
                accuracy,
                nfe: out.nfe,
                reg_error: out.reg_error.item(),
                reg_stiffness: out.reg_stiffness.item(),
            });
        }
        let rows = &iterations[first..];
        let mean = |f: fn(&IterationMetrics) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
        let metrics = EpochMetrics {
            epoch: epoch_index + 1,
            task_loss: mean(|r| r.task_loss),
            accuracy: (seen > 0).then(|| correct as f64 / seen as f64),
            mean_nfe: mean(|r| r.nfe),
            reg_error_value: mean(|r| r.reg_error),
            reg_stiffness_value: mean(|r| r.reg_stiffness),
            lambda_error: coeffs.lambda_error,
            lambda_stiffness: coeffs.lambda_stiffness,
            wall_seconds: epoch_started.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics);
        epochs.push(metrics);
    }
    let train_seconds = started.elapsed().as_secs_f64();
    let evaluation = task.evaluate(&params).map_err(|e| e.context("prediction".into()))?;
    Ok(TrainOutcome {
        epochs,
        iterations,
        params,
        evaluation,
        train_seconds,
    })
}

/// Experiment-specific data and forward passes.
struct Task<'a> {
    config: &'a TrainConfig,
    solver: SolverConfig,
    tableau: ButcherTableau,
    kind: TaskKind<'a>,
}

enum TaskKind<'a> {
    Mnist {
        train: ImageDataset,
        test: &'a ImageDataset,
    },
    Spiral {
        times: Vec<f64>,
        means: Vec<Tensor>,
        variances: Vec<Tensor>,
    },
}

impl<'a> Task<'a> {
    fn new(config: &'a TrainConfig, data: &'a TrainData) -> Result<Self, TrainError> {
        let kind = match (config.experiment.is_mnist(), data) {
            (true, TrainData::Mnist { train, test }) => {
                let train = train.head(config.train_subset);
                if train.is_empty() || test.is_empty() {
                    return Err(TrainError::Data("empty image dataset".into()));
                }
                let features = ModelKind::MlpOde.layout()[2].1[0];
                if train.features() != features || test.features() != features {
                    return Err(TrainError::Data(format!("images must have {features} features")));
                }
                TaskKind::Mnist { train, test }
            }
            (false, TrainData::Spiral(dataset)) => {
                let (means, variances) = dataset.moments();
                TaskKind::Spiral {
                    times: dataset.times.clone(),
                    means,
                    variances,
                }
            }
            _ => {
                return Err(TrainError::Data(format!(
                    "data does not match experiment {}",
                    config.experiment
                )))
            }
        };
        Ok(Task {
            config,
            solver: config.solver_config(),
            tableau: ButcherTableau::dormand_prince(),
            kind,
        })
    }

    fn batches(&self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Vec<usize>> {
        match &self.kind {
            TaskKind::Mnist { train, .. } => {
                let mut order: Vec<usize> = (0..train.len()).collect();
                order.shuffle(rng);
                order.chunks(batch_size).map(<[usize]>::to_vec).collect()
            }
            TaskKind::Spiral { .. } => vec![Vec::new()],
        }
    }

    fn forward(
        &self,
        tape: &Tape,
        vars: &[Var],
        rows: &[usize],
        end_time: f64,
        noise_seed: u64,
    ) -> Result<Forward, TrainError> {
        match &self.kind {
            TaskKind::Mnist { train, .. } => {
                let (x, labels) = train.batch(rows);
                let x = tape.constant(x);
                let (logits, mut out) = match self.config.experiment {
                    Experiment::MnistNode => self.node_logits(tape, vars, &x, end_time)?,
                    _ => {
                        let seeds = trajectory_seeds(noise_seed, self.config.train_trajectories);
                        self.nsde_logits(tape, vars, &x, end_time, &seeds)?
                    }
                };
                out.task = cross_entropy_loss(tape, &logits, &labels)?;
                out.correct = Some(count_correct(logits.value(), &labels));
                Ok(out)
            }
            TaskKind::Spiral { times, means, variances } => match self.config.experiment {
                Experiment::SpiralSde => self.spiral_sde(tape, vars, times, means, variances, noise_seed),
                _ => self.spiral_ode(tape, vars, times, means),
            },
        }
    }

    fn node_logits(&self, tape: &Tape, vars: &[Var], x: &Var, end_time: f64) -> Result<(Var, Forward), TrainError> {
        let model = MlpOde::new(vars)?;
        let f = |tape: &Tape, t: f64, z: &Var| model.dynamics(tape, t, z);
        let sol = solve(tape, &f, x, 0.0, end_time, &self.tableau, &self.solver)?;
        let logits = model.logits(tape, sol.final_state())?;
        let out = Forward {
            task: logits.clone(),
            reg_error: sol.stats.reg_error,
            reg_stiffness: sol.stats.reg_stiffness,
            nfe: sol.stats.nfe as f64,
            correct: None,
        };
        Ok((logits, out))
    }

    /// Mean logits over one solve per seed; costs and regularizers are averaged too.
    fn nsde_logits(
        &self,
        tape: &Tape,
        vars: &[Var],
        x: &Var,
        end_time: f64,
        seeds: &[u64],
    ) -> Result<(Var, Forward), TrainError> {
        let model = SdeClassifier::new(vars)?;
        let f = |tape: &Tape, t: f64, z: &Var| model.drift(tape, t, z);
        let g = |tape: &Tape, t: f64, z: &Var| model.diffusion(tape, t, z);
        let z0 = model.encode(tape, x)?;
        let (mut logits, mut reg_error, mut reg_stiffness) = (Vec::new(), Vec::new(), Vec::new());
        let mut nfe = 0;
        for &seed in seeds {
            let mut path = BrownianPath::new(seed, 0.0, z0.shape());
            let sol = sde_solve(tape, &f, &g, &z0, 0.0, end_time, &self.solver, &mut path)?;
            logits.push(model.logits(tape, sol.final_state())?);
            reg_error.push(sol.stats.reg_error);
            reg_stiffness.push(sol.stats.reg_stiffness);
            nfe += sol.stats.nfe;
        }
        let k = seeds.len() as f64;
        let average = |items: Vec<Var>| -> Result<Var, TrainError> {
            if items.len() == 1 {
                return Ok(items.into_iter().next().expect("one item"));
            }
            let refs: Vec<&Var> = items.iter().collect();
            Ok(tape.lincomb(&vec![1.0 / k; refs.len()], &refs)?)
        };
        let logits = average(logits)?;
        let out = Forward {
            task: logits.clone(),
            reg_error: average(reg_error)?,
            reg_stiffness: average(reg_stiffness)?,
            nfe: nfe as f64 / k,
            correct: None,
        };
        Ok((logits, out))
    }

    fn spiral_start(&self, tape: &Tape, rows: usize) -> Var {
        let u0 = self.config.spiral.initial;
        let data = (0..rows).flat_map(|_| u0).collect();
        tape.constant(Tensor::matrix(rows, 2, data).expect("sized"))
    }

    fn spiral_sde(
        &self,
        tape: &Tape,
        vars: &[Var],
        times: &[f64],
        means: &[Tensor],
        variances: &[Tensor],
        noise_seed: u64,
    ) -> Result<Forward, TrainError> {
        let model = SpiralSde::new(vars)?;
        let f = |tape: &Tape, t: f64, z: &Var| model.drift(tape, t, z);
        let g = |tape: &Tape, t: f64, z: &Var| model.diffusion(tape, t, z);
        let z0 = self.spiral_start(tape, self.config.spiral_paths);
        let mut path = BrownianPath::new(noise_seed, times[0], z0.shape());
        let t_end = *times.last().expect("at least two times");
        let sol = sde_solve_with_stops(tape, &f, &g, &z0, times[0], t_end, &times[1..], &self.solver, &mut path)?;
        let predicted = observed_states(&sol.times, &sol.states, times)?;
        Ok(Forward {
            task: moment_loss(tape, &predicted, means, variances, None, 0.0)?,
            reg_error: sol.stats.reg_error,
            reg_stiffness: sol.stats.reg_stiffness,
            nfe: sol.stats.nfe as f64,
            correct: None,
        })
    }

    /// Deterministic fit of the drift network to the mean trajectory.
    fn spiral_ode(&self, tape: &Tape, vars: &[Var], times: &[f64], means: &[Tensor]) -> Result<Forward, TrainError> {
        let model = SpiralSde::new(vars)?;
        let f = |tape: &Tape, t: f64, z: &Var| model.drift(tape, t, z);
        let z0 = self.spiral_start(tape, 1);
        let t_end = *times.last().expect("at least two times");
        let sol = solve_with_stops(tape, &f, &z0, times[0], t_end, &times[1..], &self.tableau, &self.solver)?;
        let predicted = observed_states(&sol.times, &sol.states, times)?;
        let mut gaps = Vec::with_capacity(times.len());
        for (z, mu) in predicted.iter().zip(means) {
            let target = tape.constant(mu.reshape(&[1, 2])?);
            let d = tape.sub(z, &target)?;
            gaps.push(tape.sum(&tape.mul(&d, &d)?)?);
        }
        let refs: Vec<&Var> = gaps.iter().collect();
        Ok(Forward {
            task: tape.lincomb(&vec![1.0; refs.len()], &refs)?,
            reg_error: sol.stats.reg_error,
            reg_stiffness: sol.stats.reg_stiffness,
            nfe: sol.stats.nfe as f64,
            correct: None,
        })
    }

    fn evaluate(&self, params: &ParamSet) -> Result<Evaluation, TrainError> {
        let mut eval_rng = rng_stream(self.config.seed, STREAM_EVAL);
        match &self.kind {
            TaskKind::Mnist { train, test } => {
                let (test_acc, nfe, seconds) = self.predict(params, test, &mut eval_rng)?;
                let train_acc = if self.config.evaluate_train {
                    self.predict(params, train, &mut eval_rng)?.0
                } else {
                    f64::NAN
                };
                Ok(Evaluation {
                    metric: "accuracy",
                    train_metric: train_acc,
                    test_metric: Some(test_acc),
                    prediction_nfe: nfe,
                    prediction_seconds: seconds,
                })
            }
            TaskKind::Spiral { .. } => {
                let started = Instant::now();
                let draws = if self.config.experiment == Experiment::SpiralSde {
                    self.config.predict_trajectories
                } else {
                    1
                };
                let (mut loss, mut nfe) = (0.0, 0.0);
                for _ in 0..draws {
                    let tape = Tape::inference();
                    let vars = params.bind_constant(&tape);
                    let out = self.forward(&tape, &vars, &[], self.config.end_time, eval_rng.next_u64())?;
                    loss += out.task.item();
                    nfe += out.nfe;
                }
                let metric = if self.config.experiment == Experiment::SpiralSde {
                    "moment_loss"
                } else {
                    "squared_error"
                };
                Ok(Evaluation {
                    metric,
                    train_metric: loss / draws as f64,
                    test_metric: None,
                    prediction_nfe: nfe / draws as f64,
                    prediction_seconds: started.elapsed().as_secs_f64(),
                })
            }
        }
    }

    /// Accuracy, mean NFE per solve and wall time over `data` in batch order.
    fn predict(
        &self,
        params: &ParamSet,
        data: &ImageDataset,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, f64, f64), TrainError> {
        let started = Instant::now();
        let (mut correct, mut nfe, mut batches) = (0usize, 0.0, 0usize);
        let rows: Vec<usize> = (0..data.len()).collect();
        for chunk in rows.chunks(self.config.batch_size) {
            let tape = Tape::inference();
            let vars = params.bind_constant(&tape);
            let (x, labels) = data.batch(chunk);
            let x = tape.constant(x);
            let (logits, out) = match self.config.experiment {
                Experiment::MnistNode => self.node_logits(&tape, &vars, &x, self.config.end_time)?,
                _ => {
                    let seeds = trajectory_seeds(rng.next_u64(), self.config.predict_trajectories);
                    self.nsde_logits(&tape, &vars, &x, self.config.end_time, &seeds)?
                }
            };
            correct += count_correct(logits.value(), &labels);
            nfe += out.nfe;
            batches += 1;
        }
        Ok((
            correct as f64 / data.len() as f64,
            nfe / batches as f64,
            started.elapsed().as_secs_f64(),
        ))
    }
}

fn trajectory_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

fn observed_states(times: &[f64], states: &[Var], wanted: &[f64]) -> Result<Vec<Var>, TrainError> {
    wanted
        .iter()
        .map(|&t| {
            times
                .iter()
                .position(|&s| s == t)
                .map(|i| states[i].clone())
                .ok_or_else(|| TrainError::Data(format!("solver did not land on observation time {t}")))
        })
        .collect()
}

/// Rows whose largest logit is at the label; ties go to the lowest index.
pub fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = &logits.data()[i * classes..(i + 1) * classes];
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            best == label
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a = rng_stream(7, STREAM_SHUFFLE).next_u64();
        assert_eq!(a, rng_stream(7, STREAM_SHUFFLE).next_u64());
        assert_ne!(a, rng_stream(7, STREAM_STEER).next_u64());
    }

    #[test]
    fn correct_counts_use_argmax() {
        let logits = Tensor::matrix(3, 3, vec![0.1, 0.9, 0.0, 2.0, 1.0, 1.0, 0.5, 0.5, 0.4]).unwrap();
        assert_eq!(count_correct(&logits, &[1, 0, 1]), 2);
    }
}
