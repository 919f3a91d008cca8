use std::fmt;
use std::str::FromStr;

use super::optim::OptimizerKind;
use super::schedule::anneal_coefficient;
use super::TrainError;
use crate::nde::{RegCoefficients, SpiralSystem};
use crate::odeint::SolverConfig;
use crate::sdeint::sde_default_config;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    MnistNode,
    MnistNsde,
    SpiralSde,
    SpiralOde,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::MnistNode,
        Experiment::MnistNsde,
        Experiment::SpiralSde,
        Experiment::SpiralOde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::MnistNode => "mnist-node",
            Experiment::MnistNsde => "mnist-nsde",
            Experiment::SpiralSde => "spiral-sde",
            Experiment::SpiralOde => "spiral-ode",
        }
    }

    pub fn is_mnist(self) -> bool {
        matches!(self, Experiment::MnistNode | Experiment::MnistNsde)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Experiment::MnistNsde | Experiment::SpiralSde)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment '{s}' (expected one of {})", names(Experiment::ALL.map(Experiment::name))))
    }
}

/// Which regularizers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularization {
    None,
    Error,
    Stiffness,
    Both,
    Steer,
    SteerError,
    SteerStiffness,
}

impl Regularization {
    pub const ALL: [Regularization; 7] = [
        Regularization::None,
        Regularization::Error,
        Regularization::Stiffness,
        Regularization::Both,
        Regularization::Steer,
        Regularization::SteerError,
        Regularization::SteerStiffness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regularization::None => "none",
            Regularization::Error => "error",
            Regularization::Stiffness => "stiffness",
            Regularization::Both => "both",
            Regularization::Steer => "steer",
            Regularization::SteerError => "steer+error",
            Regularization::SteerStiffness => "steer+stiffness",
        }
    }

    pub fn uses_error(self) -> bool {
        matches!(self, Regularization::Error | Regularization::Both | Regularization::SteerError)
    }

    pub fn uses_stiffness(self) -> bool {
        matches!(self, Regularization::Stiffness | Regularization::Both | Regularization::SteerStiffness)
    }

    pub fn uses_steer(self) -> bool {
        matches!(self, Regularization::Steer | Regularization::SteerError | Regularization::SteerStiffness)
    }
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regularization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regularization::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| {
            format!(
                "unknown regularization '{s}' (expected one of {})",
                names(Regularization::ALL.map(Regularization::name))
            )
        })
    }
}

fn names<const N: usize>(all: [&str; N]) -> String {
    all.join(", ")
}

/// Everything a training run depends on besides its data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub experiment: Experiment,
    pub regularization: Regularization,
    pub seed: u64,
    /// Epochs for the MNIST experiments, iterations for the spiral ones.
    pub epochs: usize,
    pub batch_size: usize,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    /// Error coefficient at the first epoch, annealed geometrically to `lambda_error_end`.
    pub lambda_error_start: f64,
    pub lambda_error_end: f64,
    pub lambda_stiffness: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Integration end time.
    pub end_time: f64,
    /// Half width of the sampled end-time window.
    pub steer_half_width: f64,
    /// Stochastic solves per training batch.
    pub train_trajectories: usize,
    /// Stochastic solves averaged at prediction; for the spiral fit, the
    /// number of independent path sets the evaluation loss is averaged over.
    pub predict_trajectories: usize,
    /// Predicted paths per spiral iteration.
    pub spiral_paths: usize,
    pub spiral_data_trajectories: usize,
    pub spiral_points: usize,
    pub spiral: SpiralSystem,
    /// Whether to also measure accuracy on the training set after training.
    pub evaluate_train: bool,
}

impl TrainConfig {
    /// Defaults for one experiment, at desk scale for MNIST.
    pub fn defaults(experiment: Experiment) -> Self {
        let base = TrainConfig {
            experiment,
            regularization: Regularization::None,
            seed: 0,
            epochs: 10,
            batch_size: 512,
            train_subset: Some(10_000),
            test_subset: None,
            atol: 1.4e-8,
            rtol: 1.4e-8,
            max_steps: 100_000,
            lambda_error_start: 10.0,
            lambda_error_end: 1.0,
            lambda_stiffness: 0.0285,
            optimizer: OptimizerKind::momentum(),
            learning_rate: 0.1,
            lr_decay: 1e-5,
            end_time: 1.0,
            steer_half_width: 0.5,
            train_trajectories: 1,
            predict_trajectories: 10,
            spiral_paths: 100,
            spiral_data_trajectories: 10_000,
            spiral_points: 30,
            spiral: SpiralSystem::default(),
            evaluate_train: true,
        };
        match experiment {
            Experiment::MnistNode => base,
            Experiment::MnistNsde => TrainConfig {
                atol: 1e-2,
                rtol: 1e-2,
                lambda_error_start: 10.0,
                lambda_error_end: 10.0,
                lambda_stiffness: 0.1,
                optimizer: OptimizerKind::adam(),
                learning_rate: 0.01,
                ..base
            },
            Experiment::SpiralSde => TrainConfig {
                epochs: 250,
                atol: 1e-2,
                rtol: 1e-2,
                lambda_error_start: 20.0,
                lambda_error_end: 20.0,
                lambda_stiffness: 1e-3,
                optimizer: OptimizerKind::adabelief(),
                learning_rate: 0.01,
                lr_decay: 0.0,
                ..base
            },
            Experiment::SpiralOde => TrainConfig {
                epochs: 250,
                atol: 1e-6,
                rtol: 1e-6,
                lambda_error_start: 1.0,
                lambda_error_end: 1.0,
                lambda_stiffness: 1e-3,
                optimizer: OptimizerKind::adabelief(),
                learning_rate: 0.01,
                lr_decay: 0.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.experiment.is_mnist() && self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if matches!(self.train_subset, Some(0)) || matches!(self.test_subset, Some(0)) {
            return bad("subset sizes must be positive".into());
        }
        if !(self.end_time > 0.0 && self.end_time.is_finite()) {
            return bad(format!("end_time must be positive, got {}", self.end_time));
        }
        if self.regularization.uses_steer() {
            if !self.experiment.is_mnist() {
                return bad(format!(
                    "{} needs fixed observation times and cannot sample the end time",
                    self.experiment
                ));
            }
            if !(self.steer_half_width >= 0.0 && self.steer_half_width < self.end_time) {
                return bad(format!(
                    "steer_half_width must lie in [0, end_time), got {}",
                    self.steer_half_width
                ));
            }
        }
        for (name, v) in [
            ("lambda_error_start", self.lambda_error_start),
            ("lambda_error_end", self.lambda_error_end),
            ("lambda_stiffness", self.lambda_stiffness),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if (self.lambda_error_start == 0.0) != (self.lambda_error_end == 0.0) {
            return bad("annealing between zero and a positive coefficient is undefined".into());
        }
        if self.experiment.is_stochastic() && (self.train_trajectories == 0 || self.predict_trajectories == 0) {
            return bad("trajectory counts must be positive".into());
        }
        if matches!(self.experiment, Experiment::SpiralSde) && self.spiral_paths < 2 {
            return bad("spiral_paths must be at least 2 to estimate a variance".into());
        }
        if !self.experiment.is_mnist() && (self.spiral_points < 2 || self.spiral_data_trajectories < 2) {
            return bad("spiral data needs at least 2 points and 2 trajectories".into());
        }
        self.solver_config().validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    /// Regularization weights for a zero-based epoch index.
    pub fn coefficients(&self, epoch_index: usize) -> RegCoefficients {
        let lambda_error = if self.regularization.uses_error() {
            anneal_coefficient(
                self.lambda_error_start,
                self.lambda_error_end,
                epoch_index as f64,
                self.epochs as f64,
            )
        } else {
            0.0
        };
        let lambda_stiffness = if self.regularization.uses_stiffness() {
            self.lambda_stiffness
        } else {
            0.0
        };
        RegCoefficients {
            lambda_error,
            lambda_stiffness,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let base = if self.experiment.is_stochastic() {
            sde_default_config()
        } else {
            SolverConfig::default()
        };
        SolverConfig {
            atol: self.atol,
            rtol: self.rtol,
            max_steps: self.max_steps,
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        for r in Regularization::ALL {
            assert_eq!(r.name().parse::<Regularization>().unwrap(), r);
        }
        assert!("ridge".parse::<Regularization>().is_err());
    }

    #[test]
    fn defaults_validate() {
        for e in Experiment::ALL {
            TrainConfig::defaults(e).validate().unwrap();
        }
    }

    #[test]
    fn inactive_terms_have_zero_weight() {
        let mut cfg = TrainConfig::defaults(Experiment::MnistNode);
        assert_eq!(cfg.coefficients(0), RegCoefficients::default());
        cfg.regularization = Regularization::SteerError;
        assert_eq!(cfg.coefficients(0).lambda_error, 10.0);
        assert_eq!(cfg.coefficients(0).lambda_stiffness, 0.0);
    }

    #[test]
    fn steer_is_rejected_for_spiral_fits() {
        let mut cfg = TrainConfig::defaults(Experiment::SpiralSde);
        cfg.regularization = Regularization::Steer;
        assert!(cfg.validate().is_err());
    }
}
