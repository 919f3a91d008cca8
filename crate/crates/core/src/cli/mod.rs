//! Config-driven experiment runner: IDX ingestion, training runs, metrics
//! files and SVG learning curves.
//!
//! A run writes `metrics.csv` (one row per epoch), `iterations.csv` (one row
//! per optimizer step), `params.json`, `config.txt` and `summary.json` into
//! its output directory.

mod config;
mod idx;
mod output;
mod plot;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::train::TrainError;

pub use config::{ExperimentConfig, ParseError};
pub use idx::{load_mnist_dir, load_mnist_idx, IdxError};
pub use output::{
    load_data, metrics_csv, run_experiment, write_atomic, RunArtifacts, Summary, CONFIG_FILE, ITERATIONS_FILE,
    ITERATION_COLUMNS, METRICS_COLUMNS, METRICS_FILE, PARAMS_FILE, SCHEMA_VERSION, SUMMARY_FILE,
};
pub use plot::{read_series, render_curves, render_svg, Series};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(e: csv::Error) -> Self {
        CliError::Csv(e.to_string())
    }
}
