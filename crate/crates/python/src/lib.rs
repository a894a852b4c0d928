use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use bagclip::bagloss::{loss_ft_terms, TrainBatch};
use bagclip::evaluator::{aggregate_class_probs, argmax_lowest, average_precision, Aggregation, ZeroShotOptions};
use ndarray::Array2;
use bagclip::runner::{build_synthetic_world, run_eval, run_training, ExperimentConfig, SyntheticParams};

/// `(total, image, text, dS, dtau)`.
type LossOutput = (f64, f64, f64, Vec<Vec<f64>>, f64);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("similarity rows must have equal length"));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).map_err(value_err)
}

/// Fine-tuning loss and its gradients for one batch.
#[pyfunction]
fn bag_loss(labels: Vec<usize>, sim: Vec<Vec<f64>>, tau: f64) -> PyResult<LossOutput> {
    let batch = TrainBatch::new(labels, to_array(sim)?).map_err(value_err)?;
    let ft = loss_ft_terms(&batch, tau).map_err(value_err)?;
    let grad = ft.total.grad_sim.rows().into_iter().map(|r| r.to_vec()).collect();
    Ok((ft.total.value, ft.image.value, ft.text.value, grad, ft.total.grad_tau))
}

/// Per-class zero-shot scores and the predicted index (lowest on ties).
#[pyfunction]
#[pyo3(signature = (class_sims, geometric = false, temperature = None))]
fn zero_shot(class_sims: Vec<Vec<f64>>, geometric: bool, temperature: Option<f64>) -> PyResult<(Vec<f64>, usize, bool)> {
    let aggregation = if geometric { Aggregation::Geometric } else { Aggregation::Arithmetic };
    let scores = aggregate_class_probs(&class_sims, &ZeroShotOptions { aggregation, temperature }).map_err(value_err)?;
    let (k, tie) = argmax_lowest(&scores);
    Ok((scores, k, tie))
}

/// Average precision of a ranked list of binary labels.
#[pyfunction]
fn ap(labels: Vec<bool>) -> PyResult<f64> {
    average_precision(&labels).map_err(value_err)
}

/// Writes a synthetic world under `dir` and returns the config path.
#[pyfunction]
#[pyo3(signature = (dir, seed = 0))]
fn synth(dir: PathBuf, seed: u64) -> PyResult<PathBuf> {
    let world = build_synthetic_world(&SyntheticParams { seed, ..Default::default() }).map_err(value_err)?;
    world.write(&dir).map_err(value_err)?;
    Ok(dir.join("config.toml"))
}

/// Trains from a config file; returns the run directory.
#[pyfunction]
fn train(config: PathBuf) -> PyResult<PathBuf> {
    let cfg = ExperimentConfig::load(&config).map_err(value_err)?;
    run_training(&cfg).map(|(dir, _)| dir).map_err(value_err)
}

/// Evaluates a checkpoint; returns `[(method, accuracy)]`.
#[pyfunction]
fn evaluate(config: PathBuf, checkpoint: PathBuf) -> PyResult<Vec<(String, f64)>> {
    let cfg = ExperimentConfig::load(&config).map_err(value_err)?;
    let report = run_eval(&cfg, Path::new(&checkpoint), None).map_err(value_err)?;
    Ok(report.rows.into_iter().map(|r| (r.method, r.accuracy)).collect())
}

#[pymodule]
fn pybagclip(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(bag_loss, m)?)?;
    m.add_function(wrap_pyfunction!(zero_shot, m)?)?;
    m.add_function(wrap_pyfunction!(ap, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
