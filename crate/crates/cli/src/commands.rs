//! Subcommands as plain functions returning serializable documents. The
//! binary only parses flags and formats what these return.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kernelsim_core::breakdown::BreakdownReport;
use kernelsim_core::export::chrome_trace_events;
use kernelsim_core::fixtures;
use kernelsim_core::graph::{BuildOptions, GraphDocument};
use kernelsim_core::scenarios::{ScenarioError, ScenarioSpec};
use kernelsim_core::sim::SimulationResult;
use kernelsim_core::synthetic::{generate_synthetic_trace, random_spec, RandomShape, SyntheticSpec};
use kernelsim_core::time::Nanos;
use kernelsim_core::trace::{LaneId, TraceDocument};
use kernelsim_core::transform::{TransformError, TransformPipeline};
use kernelsim_core::{WhatIfReport, Workload};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("bad --param {0:?}, expected key=value")]
    BadParam(String),
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),
    #[error("{0}")]
    Serve(String),
    #[error(transparent)]
    Core(#[from] kernelsim_core::Error),
}

impl CliError {
    pub fn name(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "IoError",
            CliError::Parse { .. } => "ParseError",
            CliError::BadParam(_) => "BadParam",
            CliError::UnknownFixture(_) => "UnknownFixture",
            CliError::Serve(_) => "ServeError",
            CliError::Core(e) => e.name(),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Core(e.into())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_workload(path: &Path, strict: bool) -> Result<Workload, CliError> {
    Ok(Workload::from_json(&read(path)?, BuildOptions { strict })?)
}

/// A what-if request: a scenario by name with parameters, or a raw
/// transformation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Request {
    Scenario(ScenarioSpec),
    Pipeline(TransformPipeline),
}

impl Request {
    /// Objects with a `scenario` key are scenario specs, anything else must
    /// be a pipeline.
    pub fn from_value(value: Value) -> Result<Self, kernelsim_core::Error> {
        if value.get("scenario").is_some() {
            serde_json::from_value(value)
                .map(Request::Scenario)
                .map_err(|e| ScenarioError::InvalidParams(e.to_string()).into())
        } else {
            serde_json::from_value(value)
                .map(Request::Pipeline)
                .map_err(|e| TransformError::InvalidStep(e.to_string()).into())
        }
    }

    /// A bare scenario name or a JSON document.
    pub fn parse(text: &str) -> Result<Self, kernelsim_core::Error> {
        let text = text.trim();
        if text.starts_with('{') {
            let value = serde_json::from_str(text).map_err(|e| ScenarioError::InvalidParams(e.to_string()))?;
            Self::from_value(value)
        } else {
            Ok(Request::Scenario(ScenarioSpec::new(text)))
        }
    }

    pub fn run(&self, workload: &Workload, baseline: &SimulationResult) -> Result<WhatIfReport, kernelsim_core::Error> {
        let pipeline = match self {
            Request::Scenario(spec) => workload.pipeline_for(spec)?,
            Request::Pipeline(p) => p.clone(),
        };
        workload.apply_against(baseline, &pipeline)
    }
}

/// `--scenario` names a JSON file, or a registered scenario when no such
/// file exists. `--param k=v` pairs are merged into the scenario's params;
/// values are JSON where they parse as JSON and strings otherwise.
pub fn load_request(scenario: Option<&str>, params: &[String]) -> Result<Option<Request>, CliError> {
    let Some(scenario) = scenario else {
        if let Some(p) = params.first() {
            return Err(CliError::BadParam(format!("{p} (no --scenario given)")));
        }
        return Ok(None);
    };
    let path = Path::new(scenario);
    let mut request = if path.is_file() {
        Request::from_value(read_json(path)?)?
    } else {
        Request::Scenario(ScenarioSpec::new(scenario))
    };
    if !params.is_empty() {
        let Request::Scenario(spec) = &mut request else {
            return Err(CliError::BadParam(format!("{} (pipelines take no params)", params[0])));
        };
        for p in params {
            let (k, v) = parse_param(p)?;
            spec.params.insert(k, v);
        }
    }
    Ok(Some(request))
}

pub fn parse_param(text: &str) -> Result<(String, Value), CliError> {
    let (k, v) = text.split_once('=').ok_or_else(|| CliError::BadParam(text.to_string()))?;
    if k.is_empty() {
        return Err(CliError::BadParam(text.to_string()));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphStats {
    pub tasks: usize,
    pub edges: usize,
    pub edges_by_kind: BTreeMap<String, usize>,
    pub lanes: usize,
    pub layers: usize,
    pub warnings: Vec<String>,
}

impl GraphStats {
    pub fn of(w: &Workload) -> Self {
        GraphStats {
            tasks: w.graph.len(),
            edges: w.graph.edge_count(),
            edges_by_kind: w
                .graph
                .edge_counts_by_kind()
                .into_iter()
                .map(|(k, n)| (k.as_str().to_string(), n))
                .collect(),
            lanes: w.graph.lanes().len(),
            layers: w.assignment.map.values().map(|t| &t.layer).collect::<std::collections::BTreeSet<_>>().len(),
            warnings: w.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildOutput {
    pub stats: GraphStats,
    pub graph: GraphDocument,
}

pub fn cmd_build(trace: &Path, strict: bool) -> Result<BuildOutput, CliError> {
    let w = load_workload(trace, strict)?;
    Ok(BuildOutput {
        stats: GraphStats::of(&w),
        graph: w.graph.to_document(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateOutput {
    pub makespan: Nanos,
    pub breakdown: BreakdownReport,
    pub lane_busy: BTreeMap<LaneId, Nanos>,
}

pub fn simulate_workload(w: &Workload) -> Result<SimulateOutput, CliError> {
    let r = w.baseline()?;
    Ok(SimulateOutput {
        makespan: r.makespan,
        breakdown: kernelsim_core::breakdown::compute_breakdown(&r, &w.graph),
        lane_busy: r.lane_busy,
    })
}

pub fn cmd_simulate(trace: &Path, strict: bool) -> Result<SimulateOutput, CliError> {
    simulate_workload(&load_workload(trace, strict)?)
}

/// Signed per-component change from baseline to prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BreakdownDelta {
    pub cpu_only: i64,
    pub gpu_only: i64,
    pub parallel: i64,
    pub idle: i64,
    pub total: i64,
}

impl BreakdownDelta {
    pub fn between(before: &BreakdownReport, after: &BreakdownReport) -> Self {
        let d = |a: Nanos, b: Nanos| b as i64 - a as i64;
        BreakdownDelta {
            cpu_only: d(before.cpu_only, after.cpu_only),
            gpu_only: d(before.gpu_only, after.gpu_only),
            parallel: d(before.parallel, after.parallel),
            idle: d(before.idle, after.idle),
            total: d(before.total, after.total),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfOutput {
    #[serde(flatten)]
    pub report: WhatIfReport,
    pub breakdown_delta: BreakdownDelta,
}

pub fn cmd_whatif(trace: &Path, request: &Request, strict: bool) -> Result<WhatIfOutput, CliError> {
    let w = load_workload(trace, strict)?;
    let report = request.run(&w, &w.baseline()?)?;
    Ok(WhatIfOutput {
        breakdown_delta: BreakdownDelta::between(&report.baseline_breakdown, &report.breakdown),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: Value,
    pub makespan: Nanos,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutput {
    pub scenario: String,
    pub param: String,
    pub baseline_makespan: Nanos,
    pub points: Vec<SweepPoint>,
}

/// Evaluates `spec` at each value of `param`, in parallel; points keep the
/// order of `values`.
pub fn sweep_workload(w: &Workload, spec: &ScenarioSpec, param: &str, values: &[Value]) -> Result<SweepOutput, CliError> {
    let base = w.baseline()?;
    let points = values
        .par_iter()
        .map(|v| {
            let r = w.apply_against(&base, &w.pipeline_for(&spec.clone().param(param, v.clone()))?)?;
            Ok(SweepPoint {
                value: v.clone(),
                makespan: r.predicted_makespan,
                speedup: r.speedup,
            })
        })
        .collect::<Result<Vec<_>, kernelsim_core::Error>>()?;
    Ok(SweepOutput {
        scenario: spec.scenario.clone(),
        param: param.to_string(),
        baseline_makespan: base.makespan,
        points,
    })
}

pub fn cmd_sweep(trace: &Path, spec: &ScenarioSpec, param: &str, values: &[Value], strict: bool) -> Result<SweepOutput, CliError> {
    sweep_workload(&load_workload(trace, strict)?, spec, param, values)
}

/// Where `gen` takes its synthetic spec from.
#[derive(Debug, Clone, PartialEq)]
pub enum GenSource {
    Spec(PathBuf),
    Fixture(String),
    /// A random mixed-lane spec of about this many tasks, shaped by the seed.
    Random(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOutput {
    pub trace: TraceDocument,
    pub expected_makespan: Nanos,
}

pub const EXPECTED_MAKESPAN_KEY: &str = "expected_makespan_ns";

pub fn synthetic_spec(source: &GenSource, seed: u64) -> Result<SyntheticSpec, CliError> {
    Ok(match source {
        GenSource::Spec(path) => serde_json::from_value(read_json(path)?).map_err(|e| CliError::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?,
        GenSource::Fixture(name) => fixtures::named()
            .remove(name.as_str())
            .ok_or_else(|| CliError::UnknownFixture(name.clone()))?,
        GenSource::Random(tasks) => {
            let shape = RandomShape::draw(*tasks, &mut ChaCha8Rng::seed_from_u64(seed));
            random_spec(&shape, seed)
        }
    })
}

/// The trace carries its expected makespan and seed in its metadata.
pub fn cmd_gen(source: &GenSource, seed: u64) -> Result<GenOutput, CliError> {
    let spec = synthetic_spec(source, seed)?;
    let (mut trace, makespan) = generate_synthetic_trace(&spec, seed).map_err(kernelsim_core::Error::from)?;
    trace.metadata.insert(EXPECTED_MAKESPAN_KEY.into(), makespan.to_string());
    trace.metadata.insert("seed".into(), seed.to_string());
    Ok(GenOutput {
        trace,
        expected_makespan: makespan,
    })
}

/// Chrome-trace document of the baseline, or of the predicted schedule.
pub fn timeline(w: &Workload, baseline: &SimulationResult, request: Option<&Request>) -> Result<Value, CliError> {
    let doc = match request {
        None => chrome_trace_events(baseline, &w.graph),
        Some(r) => {
            let report = r.run(w, baseline)?;
            chrome_trace_events(&report.result, &report.graph)
        }
    };
    Ok(doc.map_err(kernelsim_core::Error::from)?)
}

pub fn cmd_export(trace: &Path, request: Option<&Request>, strict: bool) -> Result<Value, CliError> {
    let w = load_workload(trace, strict)?;
    timeline(&w, &w.baseline()?, request)
}

/// Stable JSON rendering used for every `--json` output.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}
