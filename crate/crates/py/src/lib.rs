//! Python bindings: event sequences, simulation, shift sampling, the
//! command pipeline and the Weibull comparison.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use remshift::config::RunConfig;
use remshift::fullik::{compare_bias, CompareConfig, Method};
use remshift::ingest::{derive_time_of_day, read_events_csv, write_events_csv};
use remshift::pipeline::{Command, Run};
use remshift::scenario::CovariateScenario;
use remshift::{Dyad, Event, RemError, RiskPolicy};

fn py_err(e: RemError) -> PyErr {
    match e {
        RemError::Io(_) | RemError::Csv(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "EventSequence", module = "remshift_py")]
pub struct PyEventSequence {
    inner: remshift::EventSequence,
}

#[pymethods]
impl PyEventSequence {
    /// `events` holds (time, sender, receiver) triples; ties are separated.
    #[new]
    fn new(events: Vec<(f64, u32, u32)>, node_count: usize, horizon: f64) -> PyResult<Self> {
        let events = events.into_iter().map(|(t, s, r)| Event::new(t, Dyad::new(s, r))).collect();
        let inner = remshift::EventSequence::new(events, node_count, horizon).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, node_count=None, horizon=None))]
    fn read_csv(path: PathBuf, node_count: Option<usize>, horizon: Option<f64>) -> PyResult<Self> {
        Ok(Self { inner: read_events_csv(path, node_count, horizon).map_err(py_err)? })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        write_events_csv(&self.inner, path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "EventSequence(events={}, nodes={}, horizon={})",
            self.inner.len(),
            self.inner.node_count(),
            self.inner.horizon()
        )
    }

    fn events(&self) -> Vec<(f64, u32, u32)> {
        self.inner.events().iter().map(|e| (e.time, e.dyad.sender, e.dyad.receiver)).collect()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn ties_broken(&self) -> usize {
        self.inner.ties_broken()
    }

    fn mean_event_time(&self) -> f64 {
        self.inner.mean_event_time()
    }
}

/// One realization of the covariate scenario.
#[pyfunction]
#[pyo3(signature = (node_count=15, events=3000, seed=0))]
fn simulate_scenario(node_count: usize, events: usize, seed: u64) -> PyResult<PyEventSequence> {
    let scenario = CovariateScenario { node_count, events, ..CovariateScenario::default() };
    let inst = scenario.realize(seed).map_err(py_err)?;
    Ok(PyEventSequence { inner: inst.sequence })
}

#[pyfunction]
#[pyo3(signature = (node_count, events, shape, seed=0))]
fn simulate_weibull(node_count: usize, events: usize, shape: f64, seed: u64) -> PyResult<PyEventSequence> {
    let inner = remshift::simulate_weibull(node_count, events, shape, seed).map_err(py_err)?;
    Ok(PyEventSequence { inner })
}

/// Shifts the sequence and samples one control per event. Returns the rows as
/// (event_time, event_sender, event_receiver, control_time, control_sender,
/// control_receiver) and the number of uninformative events dropped.
#[pyfunction]
#[pyo3(signature = (sequence, nu=1.0, seed=0, self_loops=false))]
#[allow(clippy::type_complexity)]
fn shift_sample(
    sequence: &PyEventSequence,
    nu: f64,
    seed: u64,
    self_loops: bool,
) -> PyResult<(Vec<(f64, u32, u32, f64, u32, u32)>, usize)> {
    let seq = &sequence.inner;
    let policy = if self_loops { RiskPolicy::WithSelfLoops } else { RiskPolicy::NoSelfLoops };
    let dyads = policy.candidate_dyads(seq.node_count());
    let shifts = remshift::draw_shifts(&dyads, nu, seq.mean_event_time(), seed).map_err(py_err)?;
    let shifted = remshift::shift_process(seq, &shifts).map_err(py_err)?;
    let ccs = remshift::sample_case_control(&shifted, &shifts, &policy, seed).map_err(py_err)?;
    let rows = ccs
        .rows
        .iter()
        .map(|r| {
            (
                r.event_time,
                r.event_sender,
                r.event_receiver,
                r.control_time,
                r.control_sender,
                r.control_receiver,
            )
        })
        .collect();
    Ok((rows, ccs.dropped_uninformative))
}

/// Runs a pipeline command from a config file; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (command, config, out_dir=None, seed=None, workers=None))]
fn run(
    py: Python<'_>,
    command: &str,
    config: PathBuf,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> PyResult<String> {
    let command = match command {
        "simulate" => Command::Simulate,
        "shift" => Command::Shift,
        "fit" => Command::Fit,
        "baseline" => Command::Baseline,
        "compare-fullik" => Command::CompareFullik,
        "study" => Command::Study,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    };
    let mut run = Run::from_file(&config).map_err(py_err)?;
    if let Some(s) = seed {
        run.config.seed = s;
    }
    if let Some(w) = workers {
        run.config.workers = w;
    }
    if let Some(d) = out_dir {
        run.out_dir = d;
    }
    let manifest = py.detach(|| run.execute(command)).map_err(py_err)?;
    manifest.to_json().map_err(py_err)
}

/// Parses a TOML run configuration and returns it normalized.
#[pyfunction]
fn check_config(text: &str) -> PyResult<String> {
    RunConfig::from_toml(text).and_then(|c| c.to_toml()).map_err(py_err)
}

/// Mean and 2.5/97.5% quantiles of the Weibull slope per (method, n).
#[pyfunction]
#[pyo3(signature = (ns, replications, seed=1, methods=None))]
#[allow(clippy::type_complexity)]
fn compare_weibull(
    py: Python<'_>,
    ns: Vec<usize>,
    replications: usize,
    seed: u64,
    methods: Option<Vec<String>>,
) -> PyResult<Vec<(String, usize, f64, f64, f64)>> {
    let methods = match methods {
        Some(m) => m.iter().map(|s| s.parse::<Method>()).collect::<Result<Vec<_>, _>>().map_err(py_err)?,
        None => Method::ALL.to_vec(),
    };
    let cfg = CompareConfig { ns, replications, methods, seed, ..CompareConfig::default() };
    let rows = py.detach(|| compare_bias(&cfg)).map_err(py_err)?;
    Ok(rows.into_iter().map(|r| (r.method, r.n, r.mean, r.q025, r.q975)).collect())
}

#[pyfunction]
#[pyo3(name = "derive_time_of_day")]
fn time_of_day(t: f64, origin_hour: f64) -> f64 {
    derive_time_of_day(t, origin_hour)
}

#[pymodule]
fn remshift_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEventSequence>()?;
    m.add_function(wrap_pyfunction!(simulate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_weibull, m)?)?;
    m.add_function(wrap_pyfunction!(shift_sample, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(check_config, m)?)?;
    m.add_function(wrap_pyfunction!(compare_weibull, m)?)?;
    m.add_function(wrap_pyfunction!(time_of_day, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
