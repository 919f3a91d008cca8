use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::idx::load_mnist_dir;
use super::CliError;
use crate::train::{spiral_data, train_run_with, EpochMetrics, TrainData, TrainOutcome};

/// Version of the CSV and summary layouts.
pub const SCHEMA_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 11] = [
    "run",
    "config_hash",
    "epoch",
    "task_loss",
    "accuracy",
    "mean_nfe",
    "reg_error",
    "reg_stiffness",
    "lambda_error",
    "lambda_stiffness",
    "wall_seconds",
];

pub const ITERATION_COLUMNS: [&str; 9] = [
    "epoch",
    "iteration",
    "end_time",
    "task_loss",
    "objective",
    "accuracy",
    "nfe",
    "reg_error",
    "reg_stiffness",
];

pub const METRICS_FILE: &str = "metrics.csv";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const PARAMS_FILE: &str = "params.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub label: String,
    pub experiment: String,
    pub regularization: String,
    pub seed: u64,
    pub config_hash: String,
    pub git_revision: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub metric: String,
    pub final_train_metric: f64,
    pub final_test_metric: Option<f64>,
    pub prediction_nfe: f64,
    pub train_seconds: f64,
    pub prediction_seconds: f64,
    pub epochs: usize,
    pub final_task_loss: f64,
    pub final_mean_nfe: f64,
}

/// Paths of the files a run produced.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub summary: Summary,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn optional(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn metrics_csv(label: &str, hash: &str, epochs: &[EpochMetrics]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_COLUMNS).map_err(CliError::csv)?;
    for m in epochs {
        w.write_record([
            label.to_string(),
            hash.to_string(),
            m.epoch.to_string(),
            m.task_loss.to_string(),
            optional(m.accuracy),
            m.mean_nfe.to_string(),
            m.reg_error_value.to_string(),
            m.reg_stiffness_value.to_string(),
            m.lambda_error.to_string(),
            m.lambda_stiffness.to_string(),
            m.wall_seconds.to_string(),
        ])
        .map_err(CliError::csv)?;
    }
    finish(w)
}

fn iterations_csv(outcome: &TrainOutcome) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ITERATION_COLUMNS).map_err(CliError::csv)?;
    for it in &outcome.iterations {
        w.write_record([
            it.epoch.to_string(),
            it.iteration.to_string(),
            it.end_time.to_string(),
            it.task_loss.to_string(),
            it.objective.to_string(),
            optional(it.accuracy),
            it.nfe.to_string(),
            it.reg_error.to_string(),
            it.reg_stiffness.to_string(),
        ])
        .map_err(CliError::csv)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = w.into_inner().map_err(|e| CliError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Loads the data a configuration needs.
pub fn load_data(config: &ExperimentConfig) -> Result<TrainData, CliError> {
    if config.train.experiment.is_mnist() {
        let dir = config.resolved_mnist_dir();
        let (train, test) = load_mnist_dir(&dir)?;
        Ok(TrainData::Mnist {
            train,
            test: test.head(config.train.test_subset),
        })
    } else {
        Ok(TrainData::Spiral(spiral_data(&config.train)?))
    }
}

/// Trains, evaluates and writes every artifact into the output directory.
pub fn run_experiment(
    config: &ExperimentConfig,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<RunArtifacts, CliError> {
    let started_unix = unix_now();
    let data = load_data(config)?;
    let outcome = train_run_with(&config.train, &data, &mut progress)?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let hash = config.hash();
    let last = outcome.epochs.last().expect("at least one epoch");
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        label: config.label.clone(),
        experiment: config.train.experiment.to_string(),
        regularization: config.train.regularization.to_string(),
        seed: config.train.seed,
        config_hash: hash.clone(),
        git_revision: git_revision(),
        started_unix,
        finished_unix: unix_now(),
        metric: outcome.evaluation.metric.to_string(),
        final_train_metric: outcome.evaluation.train_metric,
        final_test_metric: outcome.evaluation.test_metric,
        prediction_nfe: outcome.evaluation.prediction_nfe,
        train_seconds: outcome.train_seconds,
        prediction_seconds: outcome.evaluation.prediction_seconds,
        epochs: outcome.epochs.len(),
        final_task_loss: last.task_loss,
        final_mean_nfe: last.mean_nfe,
    };
    let model = crate::train::model_kind(config.train.experiment).name();
    write_atomic(&dir.join(METRICS_FILE), metrics_csv(&config.label, &hash, &outcome.epochs)?.as_bytes())?;
    write_atomic(&dir.join(ITERATIONS_FILE), iterations_csv(&outcome)?.as_bytes())?;
    write_atomic(&dir.join(PARAMS_FILE), outcome.params.to_json(model).as_bytes())?;
    write_atomic(&dir.join(CONFIG_FILE), config.canonical().as_bytes())?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&dir.join(SUMMARY_FILE), (json + "\n").as_bytes())?;
    Ok(RunArtifacts {
        output_dir: dir.clone(),
        summary,
    })
}
