//! Python bindings for `evstop`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use evstop::ensemble::{compression_factor as compression, format_one_decimal};
use evstop::ingest::parse_records_str;
use evstop::{ErrorClass, ScenarioKind};

fn to_py(err: evstop::Error) -> PyErr {
    match err.class() {
        ErrorClass::Internal => PyRuntimeError::new_err(err.to_string()),
        ErrorClass::Data | ErrorClass::Config => PyValueError::new_err(err.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<evstop::ReferenceMode> {
    mode.parse().map_err(PyValueError::new_err)
}

fn status_name(status: evstop::Status) -> &'static str {
    match status {
        evstop::Status::Running => "running",
        evstop::Status::RejectedH0 => "rejected_h0",
        evstop::Status::BudgetExhausted => "budget_exhausted",
    }
}

#[pyclass(name = "StoppingConfig", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyStoppingConfig {
    inner: evstop::StoppingConfig,
}

#[pymethods]
impl PyStoppingConfig {
    #[new]
    #[pyo3(signature = (alpha, budget, thinning_interval = 1))]
    fn new(alpha: f64, budget: usize, thinning_interval: usize) -> PyResult<Self> {
        let inner = evstop::StoppingConfig::new(alpha, budget, thinning_interval).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn budget(&self) -> usize {
        self.inner.budget()
    }

    #[getter]
    fn log_threshold(&self) -> f64 {
        self.inner.log_threshold()
    }

    fn __repr__(&self) -> String {
        format!(
            "StoppingConfig(alpha={}, budget={}, thinning_interval={})",
            self.inner.alpha(),
            self.inner.budget(),
            self.inner.thinning_interval()
        )
    }
}

/// Incremental e-process; feed log-ratios one at a time.
#[pyclass(name = "EProcess")]
struct PyEProcess {
    state: evstop::EProcessState,
    config: evstop::StoppingConfig,
}

#[pymethods]
impl PyEProcess {
    #[new]
    fn new(config: &PyStoppingConfig) -> Self {
        Self {
            state: evstop::EProcessState::new(),
            config: config.inner,
        }
    }

    /// Adds `ln S_k` for tested sample `sample_index`; returns the new status.
    fn accumulate(&mut self, sample_index: usize, log_s: f64) -> PyResult<&'static str> {
        let step = evstop::LogRatioStep::new(sample_index, log_s).map_err(to_py)?;
        self.state = evstop::accumulate(&self.state, step, &self.config).map_err(to_py)?;
        Ok(status_name(self.state.status))
    }

    #[getter]
    fn log_e(&self) -> f64 {
        self.state.log_e
    }

    #[getter]
    fn steps_consumed(&self) -> usize {
        self.state.steps_consumed
    }

    #[getter]
    fn status(&self) -> &'static str {
        status_name(self.state.status)
    }

    #[getter]
    fn stop_index(&self) -> Option<usize> {
        self.state.stop_index
    }
}

#[pyfunction]
fn step_log_evalue(candidate: Vec<f64>, baseline: Vec<f64>) -> PyResult<f64> {
    evstop::step_log_evalue(&candidate, &baseline).map_err(to_py)
}

/// Runs the stopping rule over log-ratios for tested indices `first_index..`.
#[pyfunction]
#[pyo3(signature = (log_ratios, alpha, budget = None, first_index = 2))]
fn run_chain<'py>(
    py: Python<'py>,
    log_ratios: Vec<f64>,
    alpha: f64,
    budget: Option<usize>,
    first_index: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let config = evstop::StoppingConfig::new(alpha, budget.unwrap_or(log_ratios.len().max(1)), 1)
        .map_err(to_py)?;
    let steps = evstop::eprocess::steps_from_log_ratios(first_index, &log_ratios).map_err(to_py)?;
    let run = evstop::run_chain(&steps, &config).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("status", status_name(run.status))?;
    out.set_item("stop_index", run.stop_index)?;
    out.set_item("steps_consumed", run.steps_consumed)?;
    out.set_item("final_log_e", run.final_log_e)?;
    out.set_item("trajectory", run.trajectory)?;
    Ok(out)
}

#[pyfunction]
fn lppd(member_rows: Vec<Vec<f64>>) -> PyResult<f64> {
    evstop::lppd(&member_rows).map_err(to_py)
}

#[pyfunction]
fn jensen_gap<'py>(py: Python<'py>, member_rows: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let r = evstop::jensen_gap(&member_rows).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("ensemble_lppd", r.ensemble_lppd)?;
    out.set_item("mean_member_loglik", r.mean_member_loglik)?;
    out.set_item("gap", r.gap)?;
    Ok(out)
}

#[pyfunction]
fn integrated_autocorrelation_time<'py>(py: Python<'py>, series: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let d = evstop::integrated_autocorrelation_time(&series).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("iac_time", d.iac_time)?;
    out.set_item("recommended_interval", d.recommended_interval)?;
    out.set_item("window_used", d.window_used)?;
    Ok(out)
}

#[pyfunction]
fn compression_factor(full_budget: usize, used: usize) -> f64 {
    compression(full_budget, used)
}

/// One-decimal table formatting used in reports (`484.8`, `64`).
#[pyfunction]
fn format_compression(value: f64) -> String {
    format_one_decimal(value)
}

/// Runs the stopping rule on record text (JSON lines or CSV) and returns the
/// report as a JSON string.
#[pyfunction]
#[pyo3(signature = (records, alpha = 0.01, mode = "first_sample", budget = None, thinning = "auto", report_records = None))]
fn run_records(
    records: &str,
    alpha: f64,
    mode: &str,
    budget: Option<usize>,
    thinning: &str,
    report_records: Option<&str>,
) -> PyResult<String> {
    let parse = |text: &str| {
        parse_records_str(text, &evstop::ParseOptions::default())
            .and_then(|r| evstop::build_tables(&r))
            .map_err(to_py)
    };
    let tables = parse(records)?;
    let report_tables = report_records.map(parse).transpose()?;
    let mode = parse_mode(mode)?;
    let budget = budget.unwrap_or_else(|| tables.iter().map(|t| t.num_samples()).max().unwrap_or(1).max(1));
    let settings = evstop::RunSettings {
        alpha,
        mode,
        budget,
        thinning: thinning.parse().map_err(PyValueError::new_err)?,
    };
    let decisions = evstop::decide_all(&tables, &settings, 1).map_err(to_py)?;
    let eval = report_tables.as_deref().unwrap_or(&tables);
    let report = evstop::compression_report(&decisions, eval, alpha, budget, mode).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (kind, budget, seed, chain = 0, mu = 0.0, sigma = 1.0))]
fn generate_log_ratio_stream(kind: &str, budget: usize, seed: u64, chain: u64, mu: f64, sigma: f64) -> PyResult<Vec<f64>> {
    let kind: ScenarioKind = kind.parse().map_err(PyValueError::new_err)?;
    let spec = evstop::ScenarioSpec::new(kind, mu, sigma, 1, 1, budget, seed).map_err(to_py)?;
    Ok(evstop::generate_log_ratio_stream(&spec, chain)
        .into_iter()
        .map(|s| s.log_s)
        .collect())
}

/// Exact-null Monte Carlo certification; returns the result document as JSON.
#[pyfunction]
#[pyo3(signature = (alpha = 0.05, sigma = 1.0, budget = 200, replications = 2000, seed = 0))]
fn certify_validity(alpha: f64, sigma: f64, budget: usize, replications: usize, seed: u64) -> PyResult<String> {
    let spec = evstop::ScenarioSpec::exact_null(sigma, budget, seed).map_err(to_py)?;
    let result = evstop::certify_validity(&spec, alpha, replications).map_err(to_py)?;
    result.to_json().map_err(to_py)
}

#[pymodule]
fn evstop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStoppingConfig>()?;
    m.add_class::<PyEProcess>()?;
    m.add_function(wrap_pyfunction!(step_log_evalue, m)?)?;
    m.add_function(wrap_pyfunction!(run_chain, m)?)?;
    m.add_function(wrap_pyfunction!(lppd, m)?)?;
    m.add_function(wrap_pyfunction!(jensen_gap, m)?)?;
    m.add_function(wrap_pyfunction!(integrated_autocorrelation_time, m)?)?;
    m.add_function(wrap_pyfunction!(compression_factor, m)?)?;
    m.add_function(wrap_pyfunction!(format_compression, m)?)?;
    m.add_function(wrap_pyfunction!(run_records, m)?)?;
    m.add_function(wrap_pyfunction!(generate_log_ratio_stream, m)?)?;
    m.add_function(wrap_pyfunction!(certify_validity, m)?)?;
    Ok(())
}
