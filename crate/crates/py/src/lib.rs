//! Python bindings. Documents cross the boundary as Python dicts and lists.

use std::path::PathBuf;

use kernelsim_cli::{cmd_gen, simulate_workload, sweep_workload, timeline, CliError, GenSource, GraphStats, Request};
use kernelsim_core::graph::BuildOptions;
use kernelsim_core::scenarios::{registry, ScenarioSpec};
use kernelsim_core::sim::SimulationResult;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::Serialize;
use serde_json::Value;

create_exception!(kernelsim, KernelsimError, PyException, "Raised with `(name, message)` arguments.");

fn err(e: impl Into<CliError>) -> PyErr {
    let e = e.into();
    KernelsimError::new_err((e.name(), e.to_string()))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    loads(py, serde_json::to_string(value).map_err(|e| err(CliError::Serve(e.to_string())))?)
}

fn loads(py: Python<'_>, text: String) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    Ok(serde_json::from_str(&text).expect("json.dumps output parses"))
}

/// A scenario name, a JSON string, or a dict (scenario spec or pipeline).
fn request(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Request> {
    if let Ok(s) = obj.downcast::<PyString>() {
        return Request::parse(s.to_str()?).map_err(err);
    }
    Request::from_value(from_py(py, obj)?).map_err(err)
}

/// A parsed trace with its dependency graph and baseline schedule.
#[pyclass(frozen)]
struct Workload {
    inner: kernelsim_core::Workload,
    baseline: SimulationResult,
}

#[pymethods]
impl Workload {
    /// Parses a trace given as a JSON string or dict.
    #[new]
    #[pyo3(signature = (trace, strict = false))]
    fn new(py: Python<'_>, trace: &Bound<'_, PyAny>, strict: bool) -> PyResult<Self> {
        let text = match trace.downcast::<PyString>() {
            Ok(s) => s.to_str()?.to_owned(),
            Err(_) => from_py(py, trace)?.to_string(),
        };
        py.detach(|| {
            let inner = kernelsim_core::Workload::from_json(&text, BuildOptions { strict }).map_err(err)?;
            let baseline = inner.baseline().map_err(err)?;
            Ok(Workload { inner, baseline })
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, strict = false))]
    fn load(py: Python<'_>, path: PathBuf, strict: bool) -> PyResult<Self> {
        py.detach(|| {
            let inner = kernelsim_cli::load_workload(&path, strict).map_err(err)?;
            let baseline = inner.baseline().map_err(err)?;
            Ok(Workload { inner, baseline })
        })
    }

    #[getter]
    fn makespan(&self) -> u64 {
        self.baseline.makespan
    }

    fn stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &GraphStats::of(&self.inner))
    }

    fn graph(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.graph.to_document())
    }

    /// Baseline makespan, breakdown and per-lane busy time.
    fn simulate(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let out = py.detach(|| simulate_workload(&self.inner)).map_err(err)?;
        to_py(py, &out)
    }

    fn whatif(&self, py: Python<'_>, scenario: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let req = request(py, scenario)?;
        let report = py.detach(|| req.run(&self.inner, &self.baseline)).map_err(err)?;
        to_py(py, &report)
    }

    fn sweep(&self, py: Python<'_>, scenario: &Bound<'_, PyAny>, param: &str, values: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let spec: ScenarioSpec = match request(py, scenario)? {
            Request::Scenario(s) => s,
            Request::Pipeline(_) => return Err(err(CliError::BadParam("sweep needs a scenario".into()))),
        };
        let Value::Array(values) = from_py(py, values)? else {
            return Err(err(CliError::BadParam("values must be a list".into())));
        };
        let out = py.detach(|| sweep_workload(&self.inner, &spec, param, &values)).map_err(err)?;
        to_py(py, &out)
    }

    /// Chrome-trace timeline of the baseline, or of a scenario's prediction.
    #[pyo3(signature = (scenario = None))]
    fn timeline(&self, py: Python<'_>, scenario: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let req = scenario.map(|s| request(py, s)).transpose()?;
        let doc = py.detach(|| timeline(&self.inner, &self.baseline, req.as_ref())).map_err(err)?;
        to_py(py, &doc)
    }
}

/// Generates a synthetic trace; returns `(trace, expected_makespan)`.
#[pyfunction]
#[pyo3(signature = (fixture = None, random = None, spec = None, seed = 0))]
fn generate(py: Python<'_>, fixture: Option<String>, random: Option<usize>, spec: Option<PathBuf>, seed: u64) -> PyResult<(Py<PyAny>, u64)> {
    let source = match (fixture, random, spec) {
        (Some(f), None, None) => GenSource::Fixture(f),
        (None, Some(n), None) => GenSource::Random(n),
        (None, None, Some(p)) => GenSource::Spec(p),
        _ => return Err(err(CliError::BadParam("pass exactly one of fixture, random, spec".into()))),
    };
    let out = py.detach(|| cmd_gen(&source, seed)).map_err(err)?;
    Ok((loads(py, out.trace.to_json())?, out.expected_makespan))
}

#[pyfunction]
fn fixtures() -> Vec<&'static str> {
    kernelsim_core::fixtures::named().into_keys().collect()
}

#[pyfunction]
fn scenarios(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &registry())
}

#[pymodule]
fn kernelsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Workload>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fixtures, m)?)?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add("KernelsimError", m.py().get_type::<KernelsimError>())?;
    Ok(())
}
