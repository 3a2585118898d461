//! Python bindings. Models and results cross the boundary as JSON strings
//! in the same layout the command-line tool reads and writes; event streams
//! cross as `(timestamps_ns, types)` lists with 1-based types.

use mkhawkes_core::analysis::{attribute_causes, expected_arrival_time as e_tau, responsiveness as respond};
use mkhawkes_core::diagnostics::diagnose as run_diagnose;
use mkhawkes_core::estimate::{fit as run_fit, GridSpec, Method};
use mkhawkes_core::ingest::ingest_path;
use mkhawkes_core::likelihood::log_likelihood as loglik;
use mkhawkes_core::moments::MomentReport;
use mkhawkes_core::simulate::{simulate_path, SimConfig};
use mkhawkes_core::{ConstraintProfile, EventRecord, EventStream, HawkesError, ModelParams, SCHEMA_VERSION};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(mkhawkes, ModelError, PyValueError, "Raised when a model computation fails.");

fn err(e: HawkesError) -> PyErr {
    ModelError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    ModelError::new_err(e.to_string())
}

fn params(json: &str) -> PyResult<ModelParams> {
    ModelParams::from_json(json).map_err(err)
}

/// Window defaults to `[first, last]` event, like the CSV reader.
fn stream(
    m: usize,
    times_ns: Vec<i64>,
    types: Vec<usize>,
    start_ns: Option<i64>,
    end_ns: Option<i64>,
) -> PyResult<EventStream> {
    if times_ns.len() != types.len() {
        return Err(PyValueError::new_err(format!(
            "{} timestamps but {} types",
            times_ns.len(),
            types.len()
        )));
    }
    let start = start_ns.or(times_ns.first().copied()).unwrap_or(0);
    let end = end_ns.or(times_ns.last().copied()).unwrap_or(start);
    let events: Vec<EventRecord> = times_ns
        .into_iter()
        .zip(types)
        .map(|(timestamp_ns, event_type)| EventRecord { timestamp_ns, event_type })
        .collect();
    EventStream::new(m, start, end, &events).map_err(err)
}

fn split(s: &EventStream) -> (Vec<i64>, Vec<usize>) {
    let recs = s.records();
    (recs.iter().map(|r| r.timestamp_ns).collect(), recs.iter().map(|r| r.event_type).collect())
}

/// Stationary moments; `t` adds the count moments at that horizon.
#[pyfunction]
#[pyo3(signature = (params_json, t=None))]
fn moments(params_json: &str, t: Option<f64>) -> PyResult<String> {
    let report = MomentReport::compute(&params(params_json)?, t).map_err(err)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// One path on `[0, horizon]` seconds; path `p` of a seed is reproducible.
#[pyfunction]
#[pyo3(signature = (params_json, horizon, seed, path=0))]
fn simulate(py: Python<'_>, params_json: &str, horizon: f64, seed: u64, path: u64) -> PyResult<(Vec<i64>, Vec<usize>)> {
    let p = params(params_json)?;
    let s = py
        .detach(|| simulate_path(&p, &SimConfig::new(horizon, 1, seed), path))
        .map_err(err)?;
    Ok(split(&s))
}

#[pyfunction]
#[pyo3(signature = (params_json, times_ns, types, start_ns=None, end_ns=None))]
fn log_likelihood(
    params_json: &str,
    times_ns: Vec<i64>,
    types: Vec<usize>,
    start_ns: Option<i64>,
    end_ns: Option<i64>,
) -> PyResult<f64> {
    let p = params(params_json)?;
    let s = stream(p.dim(), times_ns, types, start_ns, end_ns)?;
    loglik(&p, &s).map_err(err)
}

/// Fits a model and returns the fit result JSON.
#[pyfunction]
#[pyo3(signature = (times_ns, types, kernels=1, profile="sym2", method="profile", grid_points=15, start_ns=None, end_ns=None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    times_ns: Vec<i64>,
    types: Vec<usize>,
    kernels: usize,
    profile: &str,
    method: &str,
    grid_points: usize,
    start_ns: Option<i64>,
    end_ns: Option<i64>,
) -> PyResult<String> {
    let profile: ConstraintProfile = profile.parse().map_err(err)?;
    let method: Method = method.parse().map_err(err)?;
    let m = match profile {
        ConstraintProfile::SymmetricBivariate => 2,
        _ => types.iter().copied().max().unwrap_or(1),
    };
    let s = stream(m, times_ns, types, start_ns, end_ns)?;
    let grid = GridSpec::default().with_points(grid_points);
    let f = py.detach(|| run_fit(&s, kernels, profile, method, &grid)).map_err(err)?;
    f.to_json().map_err(err)
}

/// Extracts the fitted parameters JSON from a fit result JSON.
#[pyfunction]
fn fitted_params(fit_json: &str) -> PyResult<String> {
    let f = mkhawkes_core::estimate::FitResult::from_json(fit_json).map_err(err)?;
    f.params_hat.to_json().map_err(err)
}

#[pyfunction]
#[pyo3(signature = (params_json, times_ns, types, start_ns=None, end_ns=None))]
fn diagnose(
    params_json: &str,
    times_ns: Vec<i64>,
    types: Vec<usize>,
    start_ns: Option<i64>,
    end_ns: Option<i64>,
) -> PyResult<String> {
    let p = params(params_json)?;
    let s = stream(p.dim(), times_ns, types, start_ns, end_ns)?;
    let (report, _, _) = run_diagnose(&p, &s).map_err(err)?;
    serde_json::to_string(&report).map_err(json_err)
}

#[pyfunction]
#[pyo3(signature = (params_json, normalized=false))]
fn responsiveness(params_json: &str, normalized: bool) -> PyResult<String> {
    let r = respond(&params(params_json)?, normalized).map_err(err)?;
    serde_json::to_string(&r).map_err(json_err)
}

#[pyfunction]
#[pyo3(signature = (params_json, times_ns, types, start_ns=None, end_ns=None))]
fn attribute(
    params_json: &str,
    times_ns: Vec<i64>,
    types: Vec<usize>,
    start_ns: Option<i64>,
    end_ns: Option<i64>,
) -> PyResult<String> {
    let p = params(params_json)?;
    let s = stream(p.dim(), times_ns, types, start_ns, end_ns)?;
    let r = attribute_causes(&p, &s).map_err(err)?;
    serde_json::to_string(&r).map_err(json_err)
}

/// Expected arrival time of the first excited event, in seconds (unnormalized).
#[pyfunction]
fn expected_arrival_time(alpha: f64, beta: f64) -> PyResult<f64> {
    e_tau(alpha, beta).map_err(err)
}

/// Quote CSV to `(timestamps_ns, types, report_json)`.
#[pyfunction]
#[pyo3(signature = (path, start_ns=None, end_ns=None))]
fn ingest(path: &str, start_ns: Option<i64>, end_ns: Option<i64>) -> PyResult<(Vec<i64>, Vec<usize>, String)> {
    let window = match (start_ns, end_ns) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("give both start_ns and end_ns or neither")),
    };
    let (s, report) = ingest_path(path, window).map_err(err)?;
    let (t, k) = split(&s);
    Ok((t, k, serde_json::to_string(&report).map_err(json_err)?))
}

#[pymodule]
fn mkhawkes(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SCHEMA_VERSION", SCHEMA_VERSION)?;
    m.add("ModelError", m.py().get_type::<ModelError>())?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fitted_params, m)?)?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    m.add_function(wrap_pyfunction!(responsiveness, m)?)?;
    m.add_function(wrap_pyfunction!(attribute, m)?)?;
    m.add_function(wrap_pyfunction!(expected_arrival_time, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    Ok(())
}
