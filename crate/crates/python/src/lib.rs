//! Python bindings: dataset generation, training, evaluation and the
//! standalone metrics. Arrays cross the boundary as nested lists; reports
//! come back as JSON text.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use spire_core::eval::{self, EvalOptions, Metric};
use spire_core::experiment::{self, AblationSpec, ExperimentConfig};
use spire_core::losses::{self, VicregCoefficients};
use spire_core::synthgen::Preset;
use spire_core::SpireError;

create_exception!(spire, SpireException, PyException);

fn err(e: SpireError) -> PyErr {
    SpireException::new_err(format!("{e} (exit code {})", experiment::exit_code(&e)))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(SpireException::new_err("ragged matrix"));
    }
    Ok(Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("checked shape"))
}

fn preset(name: &str) -> PyResult<Preset> {
    name.parse().map_err(err)
}

/// Writes a preset dataset container and returns its directory.
#[pyfunction]
#[pyo3(signature = (preset_name, seed, directory))]
fn generate(preset_name: &str, seed: u64, directory: PathBuf) -> PyResult<PathBuf> {
    experiment::cmd_generate(preset(preset_name)?, seed, &directory).map_err(err)
}

/// Shape summary of a dataset container: `(n_trials, T, channels per region)`.
#[pyfunction]
fn dataset_shape(directory: PathBuf) -> PyResult<(usize, usize, Vec<usize>)> {
    let (data, _) = spire_core::container::load_dataset(&directory).map_err(err)?;
    Ok((data.n_trials(), data.t_len(), data.channels()))
}

/// Observations of one region and trial as a `T × C` list.
#[pyfunction]
fn observations(directory: PathBuf, region: usize, trial: usize) -> PyResult<Vec<Vec<f64>>> {
    let (data, _) = spire_core::container::load_dataset(&directory).map_err(err)?;
    let x = data
        .observations
        .get(region)
        .ok_or_else(|| SpireException::new_err(format!("no region {region}")))?;
    if trial >= x.dim().0 {
        return Err(SpireException::new_err(format!("no trial {trial}")));
    }
    Ok(x.index_axis(ndarray::Axis(0), trial).outer_iter().map(|r| r.to_vec()).collect())
}

#[pyfunction]
fn variants() -> Vec<String> {
    experiment::registry().into_iter().map(|v| v.name).collect()
}

/// Trains every seed of `variant` from a TOML config and returns
/// `(seed, run_dir or None, error or None)` per seed.
#[pyfunction]
#[pyo3(signature = (config_path, out_root, seeds=None, variant="SPIRE_synth", resume=false, threads=1))]
fn train(
    py: Python<'_>,
    config_path: PathBuf,
    out_root: PathBuf,
    seeds: Option<Vec<u64>>,
    variant: &str,
    resume: bool,
    threads: usize,
) -> PyResult<Vec<(u64, Option<PathBuf>, Option<String>)>> {
    let cfg = ExperimentConfig::load(&config_path).map_err(err)?;
    let spec = AblationSpec::parse(variant).map_err(err)?;
    let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
    let runs = py
        .detach(|| experiment::cmd_train(&cfg, &spec, &seeds, &out_root, resume, threads))
        .map_err(err)?;
    Ok(runs
        .into_iter()
        .map(|(s, r)| match r {
            Ok(dir) => (s, Some(dir), None),
            Err(e) => (s, None, Some(e.to_string())),
        })
        .collect())
}

/// Evaluates run directories and writes the report files into
/// `report_dir`. Returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (run_dirs, report_dir, dataset=None, metrics=None))]
fn evaluate(
    py: Python<'_>,
    run_dirs: Vec<PathBuf>,
    report_dir: PathBuf,
    dataset: Option<PathBuf>,
    metrics: Option<Vec<String>>,
) -> PyResult<String> {
    let mut opts = EvalOptions::default();
    if let Some(m) = metrics {
        opts.metrics = m.iter().map(|s| s.parse::<Metric>()).collect::<Result<_, _>>().map_err(err)?;
    }
    let report = py
        .detach(|| experiment::cmd_eval(&run_dirs, dataset.as_deref(), &opts, &report_dir))
        .map_err(err)?;
    serde_json::to_string(&report).map_err(|e| SpireException::new_err(e.to_string()))
}

/// Canonical correlations between two `N × d` matrices.
#[pyfunction]
#[pyo3(signature = (a, b, k=None))]
fn cca(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, k: Option<usize>) -> PyResult<Vec<f64>> {
    let (a, b) = (matrix(a)?, matrix(b)?);
    let k = k.unwrap_or(a.ncols().min(b.ncols()));
    Ok(eval::cca_align(a.view(), b.view(), k).map_err(err)?.correlations)
}

/// Unbiased Gaussian-kernel MMD²; median-heuristic bandwidth when omitted.
#[pyfunction]
#[pyo3(signature = (x, y, bandwidth=None))]
fn mmd(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, bandwidth: Option<f64>) -> PyResult<f64> {
    eval::mmd_unbiased(matrix(x)?.view(), matrix(y)?.view(), bandwidth).map_err(err)
}

/// `(unique_shared, unique_private, redundant)` from an FVE triple.
#[pyfunction]
fn partition(fve_s: f64, fve_p: f64, fve_sp: f64) -> (f64, f64, f64) {
    let v = eval::VariancePartition::from_fves(fve_s, fve_p, fve_sp);
    (v.unique_shared, v.unique_private, v.redundant)
}

#[pyfunction]
#[pyo3(signature = (za, zb, invariance=25.0 / 51.0, variance=25.0 / 51.0, covariance=1.0 / 51.0))]
fn vicreg(za: Vec<Vec<f64>>, zb: Vec<Vec<f64>>, invariance: f64, variance: f64, covariance: f64) -> PyResult<f64> {
    let c = VicregCoefficients {
        invariance,
        variance,
        covariance,
    };
    losses::vicreg(matrix(za)?.view(), matrix(zb)?.view(), &c).map_err(err)
}

#[pyfunction]
fn orthogonality(z_sh: Vec<Vec<f64>>, z_pr: Vec<Vec<f64>>) -> PyResult<f64> {
    losses::orthogonality_loss(matrix(z_sh)?.view(), matrix(z_pr)?.view()).map_err(err)
}

#[pymodule]
fn spire(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SpireException", m.py().get_type::<SpireException>())?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_shape, m)?)?;
    m.add_function(wrap_pyfunction!(observations, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(cca, m)?)?;
    m.add_function(wrap_pyfunction!(mmd, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add_function(wrap_pyfunction!(vicreg, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonality, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
