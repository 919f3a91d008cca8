use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::train::{Experiment, OptimizerKind, TrainConfig};

use super::CliError;

/// Parse failure with the 1-based line it refers to (0 when not tied to a line).
#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ParseError {}

/// A training configuration plus where its data comes from and where results go.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Legend name for plots.
    pub label: String,
    pub mnist_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "experiment",
    "regularization",
    "label",
    "seed",
    "epochs",
    "iterations",
    "batch_size",
    "train_subset",
    "test_subset",
    "atol",
    "rtol",
    "max_steps",
    "lambda_error",
    "lambda_error_start",
    "lambda_error_end",
    "lambda_stiffness",
    "optimizer",
    "learning_rate",
    "lr_decay",
    "momentum",
    "beta1",
    "beta2",
    "eps",
    "end_time",
    "steer_half_width",
    "train_trajectories",
    "predict_trajectories",
    "spiral_paths",
    "spiral_data_trajectories",
    "spiral_points",
    "spiral_initial",
    "evaluate_train",
    "mnist_dir",
    "output_dir",
];

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ParseError> {
        let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ParseError {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ParseError {
                    line,
                    message: format!("unknown key '{key}'"),
                });
            }
            if value.is_empty() {
                return Err(ParseError {
                    line,
                    message: format!("missing value for '{key}'"),
                });
            }
            if let Some((first, _)) = entries.insert(key, (line, value)) {
                return Err(ParseError {
                    line,
                    message: format!("duplicate key '{key}' (first set on line {first})"),
                });
            }
        }
        if entries.contains_key("epochs") && entries.contains_key("iterations") {
            let (line, _) = entries["iterations"];
            return Err(ParseError {
                line,
                message: "set either 'epochs' or 'iterations', not both".into(),
            });
        }

        let (line, value) = *entries.get("experiment").ok_or(ParseError {
            line: 0,
            message: "missing required key 'experiment'".into(),
        })?;
        let experiment: Experiment = value.parse().map_err(|message| ParseError { line, message })?;
        let mut train = TrainConfig::defaults(experiment);
        let mut label = None;
        let mut mnist_dir = None;
        let mut output_dir = None;
        let (mut beta1, mut beta2, mut eps, mut mass) = (None, None, None, None);
        let mut optimizer = None;

        for (&key, &(line, value)) in &entries {
            let err = |message: String| ParseError { line, message };
            match key {
                "experiment" => {}
                "regularization" => train.regularization = value.parse().map_err(err)?,
                "label" => label = Some(value.to_string()),
                "seed" => train.seed = parse_num(key, value, line)?,
                "epochs" | "iterations" => train.epochs = parse_num(key, value, line)?,
                "batch_size" => train.batch_size = parse_num(key, value, line)?,
                "train_subset" => train.train_subset = parse_subset(key, value, line)?,
                "test_subset" => train.test_subset = parse_subset(key, value, line)?,
                "atol" => train.atol = parse_num(key, value, line)?,
                "rtol" => train.rtol = parse_num(key, value, line)?,
                "max_steps" => train.max_steps = parse_num(key, value, line)?,
                "lambda_error" => {
                    let v = parse_num(key, value, line)?;
                    train.lambda_error_start = v;
                    train.lambda_error_end = v;
                }
                "lambda_error_start" => train.lambda_error_start = parse_num(key, value, line)?,
                "lambda_error_end" => train.lambda_error_end = parse_num(key, value, line)?,
                "lambda_stiffness" => train.lambda_stiffness = parse_num(key, value, line)?,
                "optimizer" => optimizer = Some((line, value)),
                "learning_rate" => train.learning_rate = parse_num(key, value, line)?,
                "lr_decay" => train.lr_decay = parse_num(key, value, line)?,
                "momentum" => mass = Some(parse_num(key, value, line)?),
                "beta1" => beta1 = Some(parse_num(key, value, line)?),
                "beta2" => beta2 = Some(parse_num(key, value, line)?),
                "eps" => eps = Some(parse_num(key, value, line)?),
                "end_time" => train.end_time = parse_num(key, value, line)?,
                "steer_half_width" => train.steer_half_width = parse_num(key, value, line)?,
                "train_trajectories" => train.train_trajectories = parse_num(key, value, line)?,
                "predict_trajectories" => train.predict_trajectories = parse_num(key, value, line)?,
                "spiral_paths" => train.spiral_paths = parse_num(key, value, line)?,
                "spiral_data_trajectories" => train.spiral_data_trajectories = parse_num(key, value, line)?,
                "spiral_points" => train.spiral_points = parse_num(key, value, line)?,
                "spiral_initial" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(err(format!("spiral_initial needs two comma-separated numbers, got '{value}'")));
                    }
                    train.spiral.initial = [parse_num(key, parts[0], line)?, parse_num(key, parts[1], line)?];
                }
                "evaluate_train" => train.evaluate_train = parse_num(key, value, line)?,
                "mnist_dir" => mnist_dir = Some(base_dir.join(value)),
                "output_dir" => output_dir = Some(base_dir.join(value)),
                _ => unreachable!("key list checked above"),
            }
        }

        if let Some((line, value)) = optimizer {
            train.optimizer = match value {
                "momentum" => OptimizerKind::momentum(),
                "adam" => OptimizerKind::adam(),
                "adabelief" => OptimizerKind::adabelief(),
                _ => {
                    return Err(ParseError {
                        line,
                        message: format!("unknown optimizer '{value}' (expected momentum, adam or adabelief)"),
                    })
                }
            };
        }
        train.optimizer = match train.optimizer {
            OptimizerKind::Momentum { mass: m } => {
                reject_for("beta1/beta2/eps", beta1.or(beta2).or(eps), &entries, "momentum", &["beta1", "beta2", "eps"])?;
                OptimizerKind::Momentum { mass: mass.unwrap_or(m) }
            }
            OptimizerKind::Adam { beta1: b1, beta2: b2, eps: e } => {
                reject_for("momentum", mass, &entries, "adam", &["momentum"])?;
                OptimizerKind::Adam {
                    beta1: beta1.unwrap_or(b1),
                    beta2: beta2.unwrap_or(b2),
                    eps: eps.unwrap_or(e),
                }
            }
            OptimizerKind::AdaBelief { beta1: b1, beta2: b2, eps: e } => {
                reject_for("momentum", mass, &entries, "adabelief", &["momentum"])?;
                OptimizerKind::AdaBelief {
                    beta1: beta1.unwrap_or(b1),
                    beta2: beta2.unwrap_or(b2),
                    eps: eps.unwrap_or(e),
                }
            }
        };

        let config = ExperimentConfig {
            label: label.unwrap_or_else(|| format!("{}-{}", experiment, train.regularization)),
            train,
            mnist_dir,
            output_dir: output_dir.unwrap_or_else(|| base_dir.join("runs").join(experiment.name())),
        };
        config.train.validate().map_err(|e| ParseError {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text, base).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Image directory: the configured one, else `$MNIST_DIR`, else `data/mnist`.
    pub fn resolved_mnist_dir(&self) -> PathBuf {
        self.mnist_dir
            .clone()
            .or_else(|| std::env::var_os("MNIST_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }

    /// Every setting that affects the numbers, one `key = value` per line.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let subset = |s: Option<usize>| s.map_or("all".to_string(), |n| n.to_string());
        let mut lines = vec![
            format!("experiment = {}", t.experiment),
            format!("regularization = {}", t.regularization),
            format!("seed = {}", t.seed),
            format!("epochs = {}", t.epochs),
            format!("batch_size = {}", t.batch_size),
            format!("train_subset = {}", subset(t.train_subset)),
            format!("test_subset = {}", subset(t.test_subset)),
            format!("atol = {:e}", t.atol),
            format!("rtol = {:e}", t.rtol),
            format!("max_steps = {}", t.max_steps),
            format!("lambda_error_start = {:e}", t.lambda_error_start),
            format!("lambda_error_end = {:e}", t.lambda_error_end),
            format!("lambda_stiffness = {:e}", t.lambda_stiffness),
            format!("optimizer = {}", t.optimizer.name()),
            format!("learning_rate = {:e}", t.learning_rate),
            format!("lr_decay = {:e}", t.lr_decay),
        ];
        match t.optimizer {
            OptimizerKind::Momentum { mass } => lines.push(format!("momentum = {mass:e}")),
            OptimizerKind::Adam { beta1, beta2, eps } | OptimizerKind::AdaBelief { beta1, beta2, eps } => {
                lines.push(format!("beta1 = {beta1:e}"));
                lines.push(format!("beta2 = {beta2:e}"));
                lines.push(format!("eps = {eps:e}"));
            }
        }
        lines.extend([
            format!("end_time = {:e}", t.end_time),
            format!("steer_half_width = {:e}", t.steer_half_width),
            format!("train_trajectories = {}", t.train_trajectories),
            format!("predict_trajectories = {}", t.predict_trajectories),
            format!("spiral_paths = {}", t.spiral_paths),
            format!("spiral_data_trajectories = {}", t.spiral_data_trajectories),
            format!("spiral_points = {}", t.spiral_points),
            format!("spiral_initial = {:e}, {:e}", t.spiral.initial[0], t.spiral.initial[1]),
            format!("evaluate_train = {}", t.evaluate_train),
        ]);
        lines.join("\n") + "\n"
    }

    /// SHA-256 of [`ExperimentConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, ParseError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| ParseError {
        line,
        message: format!("invalid value '{value}' for '{key}': {e}"),
    })
}

fn parse_subset(key: &str, value: &str, line: usize) -> Result<Option<usize>, ParseError> {
    if value == "all" {
        Ok(None)
    } else {
        parse_num(key, value, line).map(Some)
    }
}

fn reject_for<T>(
    what: &str,
    given: Option<T>,
    entries: &BTreeMap<&str, (usize, &str)>,
    optimizer: &str,
    keys: &[&str],
) -> Result<(), ParseError> {
    if given.is_none() {
        return Ok(());
    }
    let line = keys.iter().filter_map(|k| entries.get(k).map(|e| e.0)).min().unwrap_or(0);
    Err(ParseError {
        line,
        message: format!("{what} does not apply to the {optimizer} optimizer"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Regularization;

    fn parse(text: &str) -> Result<ExperimentConfig, ParseError> {
        ExperimentConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse("experiment = spiral-sde\n").unwrap();
        assert_eq!(c.train, TrainConfig::defaults(Experiment::SpiralSde));
        assert_eq!(c.output_dir, Path::new("/base/runs/spiral-sde"));
        assert_eq!(c.label, "spiral-sde-none");
    }

    #[test]
    fn overrides_and_comments() {
        let c = parse(
            "# desk run\nexperiment = mnist-node\nregularization = steer+error  # baseline mix\n\
             seed = 3\ntrain_subset = all\nlambda_error = 5\noutput_dir = out\n",
        )
        .unwrap();
        assert_eq!(c.train.regularization, Regularization::SteerError);
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.train.train_subset, None);
        assert_eq!((c.train.lambda_error_start, c.train.lambda_error_end), (5.0, 5.0));
        assert_eq!(c.output_dir, Path::new("/base/out"));
    }

    #[test]
    fn unknown_regularization_reports_line() {
        let e = parse("experiment = mnist-node\n\nregularization = ridge\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("ridge"), "{e}");
    }

    #[test]
    fn structural_errors_report_lines() {
        assert_eq!(parse("experiment = mnist-node\nseed 4\n").unwrap_err().line, 2);
        assert_eq!(parse("experiment = mnist-node\ncolour = red\n").unwrap_err().line, 2);
        assert_eq!(parse("experiment = mnist-node\nseed = 1\nseed = 2\n").unwrap_err().line, 3);
        assert_eq!(parse("experiment = mnist-node\nseed = -1\n").unwrap_err().line, 2);
        assert_eq!(parse("seed = 1\n").unwrap_err().line, 0);
    }

    #[test]
    fn optimizer_specific_keys_are_checked() {
        assert!(parse("experiment = spiral-sde\nmomentum = 0.5\n").is_err());
        let c = parse("experiment = spiral-sde\noptimizer = momentum\nmomentum = 0.5\n").unwrap();
        assert_eq!(c.train.optimizer, OptimizerKind::Momentum { mass: 0.5 });
    }

    #[test]
    fn hash_tracks_numeric_settings() {
        let a = parse("experiment = spiral-sde\n").unwrap();
        let b = parse("experiment = spiral-sde\nlabel = other\noutput_dir = elsewhere\n").unwrap();
        let c = parse("experiment = spiral-sde\nseed = 1\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
