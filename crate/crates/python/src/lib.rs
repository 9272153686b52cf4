//! Python bindings for the latent-class referendum library.
//!
//! Everything file-based goes through paths so that Python code can drive
//! the same artifacts the command-line tool reads and writes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lclogit::{
    AttributeSchema, CovariateModel, DataSchema, DesignConfig, FitOptions, LikelihoodContext, ModelSpec, SegmentShares,
    SimConfig, WtpEntry,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: lclogit::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dataset(observations: &Path, respondents: &Path) -> PyResult<lclogit::Dataset> {
    let schema = DataSchema::new(AttributeSchema::table1(), vec![]);
    lclogit::load_dataset(observations, respondents, &schema).map_err(err)
}

/// Orthonormal polynomial codes, one row per level and one column per degree.
#[pyfunction]
fn orthogonal_poly_codes(levels: Vec<f64>, degree: usize) -> PyResult<Vec<Vec<f64>>> {
    lclogit::orthogonal_poly_codes(&levels, degree).map_err(err)
}

/// Present value of one unit paid yearly for `years` years.
#[pyfunction]
fn annuity_factor(rate: f64, years: u32) -> f64 {
    lclogit::design::annuity_factor(rate, years)
}

/// Share-weighted WTP. `None` marks a segment not willing to pay, which
/// counts as zero.
#[pyfunction]
fn household_average_wtp(shares: BTreeMap<String, f64>, wtp: BTreeMap<String, Option<f64>>) -> PyResult<f64> {
    let (names, values): (Vec<String>, Vec<f64>) = shares.into_iter().unzip();
    let shares = SegmentShares::new(names, values).map_err(err)?;
    let entries: Vec<(String, WtpEntry)> = wtp
        .into_iter()
        .map(|(k, v)| (k, v.map_or(WtpEntry::NotWilling, WtpEntry::Value)))
        .collect();
    lclogit::household_average_wtp(&shares, &entries).map_err(err)
}

/// Blocked design with its diagnostics.
#[pyfunction]
#[pyo3(signature = (seed, tasks=48, blocks=8))]
fn generate_design(py: Python<'_>, seed: u64, tasks: usize, blocks: usize) -> PyResult<PyObject> {
    let config = DesignConfig {
        tasks,
        blocks,
        ..DesignConfig::default()
    };
    let d = lclogit::generate_design(&config, seed).map_err(err)?;
    let out = PyDict::new_bound(py);
    let tasks: Vec<(u32, u32, String, Vec<f64>)> = d
        .tasks
        .iter()
        .map(|t| (t.task_id, t.block_id, d.schema.categories()[t.category].clone(), t.values.clone()))
        .collect();
    out.set_item("tasks", tasks)?;
    out.set_item("max_abs_correlation", d.diagnostics.max_abs_correlation)?;
    out.set_item("d_efficiency", d.diagnostics.d_efficiency)?;
    out.set_item("warning", d.warning)?;
    Ok(out.into())
}

/// Simulate respondents from a spec with declared values and write the
/// observations, respondents and truth files into `out_dir`.
#[pyfunction]
#[pyo3(signature = (spec, respondents, seed, out_dir, covariates=None))]
fn simulate(
    py: Python<'_>,
    spec: PathBuf,
    respondents: usize,
    seed: u64,
    out_dir: PathBuf,
    covariates: Option<PathBuf>,
) -> PyResult<PyObject> {
    let spec = ModelSpec::from_file(&spec).map_err(err)?;
    let covariates = match covariates {
        Some(p) => CovariateModel::from_file(&p).map_err(err)?,
        None => CovariateModel::default(),
    };
    let design = lclogit::generate_design(&DesignConfig::default(), seed).map_err(err)?;
    let config = SimConfig {
        spec,
        respondents,
        design,
        covariates,
        seed,
    };
    let sim = py.allow_threads(|| lclogit::simulate_population(&config)).map_err(err)?;
    std::fs::create_dir_all(&out_dir)?;
    sim.dataset
        .write_observations(&out_dir.join("observations.csv"))
        .map_err(err)?;
    sim.dataset
        .write_respondents(&out_dir.join("respondents.csv"))
        .map_err(err)?;
    sim.write_truth(&out_dir.join("observations.truth.csv")).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("n_observations", sim.dataset.n_observations())?;
    out.set_item("class_frequencies", sim.class_frequencies())?;
    Ok(out.into())
}

/// Log-likelihood of a dataset under named parameter values, or under the
/// spec's declared values when `params` is omitted.
#[pyfunction]
#[pyo3(signature = (observations, respondents, spec, params=None))]
fn log_likelihood(
    observations: PathBuf,
    respondents: PathBuf,
    spec: PathBuf,
    params: Option<BTreeMap<String, f64>>,
) -> PyResult<f64> {
    let spec = ModelSpec::from_file(&spec).map_err(err)?;
    let data = dataset(&observations, &respondents)?;
    let values = match params {
        Some(p) => spec.pack(&p).map_err(err)?,
        None => spec
            .declared_values()
            .ok_or_else(|| PyValueError::new_err("spec does not declare every value"))?,
    };
    let ctx = LikelihoodContext::new(&data, &spec).map_err(err)?;
    Ok(ctx.total_log_likelihood(&values).map_err(err)?.log_likelihood)
}

/// Maximum-likelihood fit. Returns the summary statistics together with
/// `params` and `std_errors` keyed by parameter name.
#[pyfunction]
#[pyo3(signature = (observations, respondents, spec, starts=4, seed=0))]
fn fit(
    py: Python<'_>,
    observations: PathBuf,
    respondents: PathBuf,
    spec: PathBuf,
    starts: usize,
    seed: u64,
) -> PyResult<PyObject> {
    let spec = ModelSpec::from_file(&spec).map_err(err)?;
    let data = dataset(&observations, &respondents)?;
    let options = FitOptions {
        starts,
        seed,
        ..FitOptions::default()
    };
    let f = py.allow_threads(|| lclogit::fit(&data, &spec, &options)).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("log_likelihood", f.log_likelihood)?;
    out.set_item("n_params", f.n_params)?;
    out.set_item("aic", f.aic)?;
    out.set_item("bic", f.bic)?;
    out.set_item("converged", f.converged)?;
    out.set_item("params", f.params.unpack())?;
    let se: BTreeMap<String, f64> = f
        .estimates
        .iter()
        .filter_map(|e| e.se.map(|s| (e.name.clone(), s)))
        .collect();
    out.set_item("std_errors", se)?;
    Ok(out.into())
}

#[pymodule]
fn lclogit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(orthogonal_poly_codes, m)?)?;
    m.add_function(wrap_pyfunction!(annuity_factor, m)?)?;
    m.add_function(wrap_pyfunction!(household_average_wtp, m)?)?;
    m.add_function(wrap_pyfunction!(generate_design, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    Ok(())
}
