//! Python bindings: validate and run experiment configs, plot metrics and
//! simulate the spiral reference data.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use regnde_core::cli::{render_curves, run_experiment, CliError, ExperimentConfig};
use regnde_core::nde::{spiral_truth_simulate, SpiralSystem};

fn to_py(e: CliError) -> PyErr {
    match e {
        CliError::Parse { .. } | CliError::Usage(_) | CliError::Schema { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn load(path: PathBuf, seed: Option<u64>, subset: Option<usize>, out_dir: Option<PathBuf>) -> PyResult<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&path).map_err(to_py)?;
    if let Some(seed) = seed {
        config.train.seed = seed;
    }
    if let Some(subset) = subset {
        config.train.train_subset = Some(subset);
    }
    if let Some(dir) = out_dir {
        config.output_dir = dir;
    }
    config
        .train
        .validate()
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(config)
}

/// Parses and validates a config; returns its canonical text and hash.
#[pyfunction]
#[pyo3(signature = (path, seed=None, subset=None, out_dir=None))]
fn validate_config(
    path: PathBuf,
    seed: Option<u64>,
    subset: Option<usize>,
    out_dir: Option<PathBuf>,
) -> PyResult<(String, String)> {
    let config = load(path, seed, subset, out_dir)?;
    Ok((config.canonical(), config.hash()))
}

/// Runs one experiment and returns its summary as a dict.
#[pyfunction]
#[pyo3(signature = (path, seed=None, subset=None, out_dir=None))]
fn run_config<'py>(
    py: Python<'py>,
    path: PathBuf,
    seed: Option<u64>,
    subset: Option<usize>,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = load(path, seed, subset, out_dir)?;
    let artifacts = py.detach(|| run_experiment(&config, |_| {})).map_err(to_py)?;
    let text = serde_json::to_string(&artifacts.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Writes an SVG of the learning curves in the given metrics CSVs.
#[pyfunction]
fn plot_curves(csv_paths: Vec<PathBuf>, out: PathBuf) -> PyResult<()> {
    render_curves(&csv_paths, &out).map_err(to_py)
}

/// Simulates the reference spiral SDE; returns the sample times and the
/// paths as nested lists indexed `[trajectory][point][component]`.
#[pyfunction]
#[pyo3(signature = (trajectories, points=30, seed=0))]
fn spiral_paths(py: Python<'_>, trajectories: usize, points: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<Vec<[f64; 2]>>)> {
    let data = py
        .detach(|| spiral_truth_simulate(&SpiralSystem::default(), trajectories, points, seed))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let flat = data.paths.data();
    let paths = (0..trajectories)
        .map(|k| {
            (0..points)
                .map(|i| {
                    let at = 2 * (k * points + i);
                    [flat[at], flat[at + 1]]
                })
                .collect()
        })
        .collect();
    Ok((data.times, paths))
}

#[pymodule]
fn regnde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(plot_curves, m)?)?;
    m.add_function(wrap_pyfunction!(spiral_paths, m)?)?;
    Ok(())
}
