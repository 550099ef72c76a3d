//! Kernel-granularity what-if analysis for DNN training traces.
//!
//! A trace becomes a dependency graph of CPU calls, GPU tasks and
//! communication; optimizations are expressed as graph transformations and
//! their effect is predicted by replaying the graph through a simulator.
//!
//! ```
//! use kernelsim_core::{synthetic, Workload, scenarios::ScenarioSpec};
//!
//! let spec = synthetic::random_spec(&synthetic::RandomShape::default(), 7);
//! let (trace, expected) = synthetic::generate_synthetic_trace(&spec, 7).unwrap();
//! let w = Workload::from_trace(trace, Default::default()).unwrap();
//! assert_eq!(w.baseline().unwrap().makespan, expected);
//! let r = w.whatif(&ScenarioSpec::new("amp").param("compute_factor", 1).param("memory_factor", 1)).unwrap();
//! assert_eq!(r.speedup, 0.0);
//! ```

pub mod breakdown;
pub mod comm;
pub mod export;
pub mod fixtures;
pub mod graph;
pub mod layers;
pub mod scenarios;
pub mod sim;
pub mod synthetic;
pub mod time;
pub mod trace;
pub mod transform;

use serde::Serialize;

use breakdown::{compute_breakdown, BreakdownReport};
use graph::{build_graph_with, BuildOptions, DependencyGraph};
use layers::{map_tasks_to_layers, LayerAssignment};
use scenarios::{build_pipeline, ScenarioInput, ScenarioSpec};
use sim::{simulate_with, SimulationResult};
use time::Nanos;
use trace::{LaneId, TraceDocument};
use transform::{apply_pipeline, TransformPipeline};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] trace::TraceError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Layer(#[from] layers::LayerError),
    #[error(transparent)]
    Transform(#[from] transform::TransformError),
    #[error(transparent)]
    Comm(#[from] comm::CommError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Scenario(#[from] scenarios::ScenarioError),
    #[error(transparent)]
    Export(#[from] export::ExportError),
}

impl Error {
    /// Structured error name, e.g. `OrphanKernel` or `NoWeightUpdate`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Trace(e) => e.name(),
            Error::Graph(e) => e.name(),
            Error::Layer(e) => e.name(),
            Error::Transform(e) => e.name(),
            Error::Comm(e) => e.name(),
            Error::Sim(e) => e.name(),
            Error::Scenario(e) => e.name(),
            Error::Export(e) => e.name(),
        }
    }

    /// The input was fine but the workload lacks what was asked of it.
    pub fn is_precondition(&self) -> bool {
        match self {
            Error::Scenario(e) => e.is_precondition(),
            Error::Comm(e) => scenarios::ScenarioError::Comm(e.clone()).is_precondition(),
            _ => false,
        }
    }
}

/// A parsed trace with its layer-mapped dependency graph.
#[derive(Debug, Clone)]
pub struct Workload {
    pub trace: TraceDocument,
    pub graph: DependencyGraph,
    pub assignment: LayerAssignment,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfReport {
    pub baseline_makespan: Nanos,
    pub predicted_makespan: Nanos,
    pub speedup: f64,
    pub baseline_breakdown: BreakdownReport,
    pub breakdown: BreakdownReport,
    pub lane_busy: std::collections::BTreeMap<LaneId, Nanos>,
    #[serde(skip)]
    pub graph: DependencyGraph,
    #[serde(skip)]
    pub result: SimulationResult,
}

impl Workload {
    pub fn from_json(text: &str, options: BuildOptions) -> Result<Self, Error> {
        Self::from_trace(trace::parse_trace(text)?, options)
    }

    pub fn from_trace(trace: TraceDocument, options: BuildOptions) -> Result<Self, Error> {
        trace.validate()?;
        let (mut graph, report) = build_graph_with(&trace, options)?;
        let assignment = map_tasks_to_layers(&mut graph, &trace.layer_markers)?;
        Ok(Workload {
            trace,
            graph,
            assignment,
            warnings: report.warnings,
        })
    }

    pub fn input(&self) -> ScenarioInput<'_> {
        ScenarioInput {
            graph: &self.graph,
            buckets: self.trace.gradient_buckets.as_ref(),
        }
    }

    pub fn baseline(&self) -> Result<SimulationResult, Error> {
        Ok(simulate_with(&self.graph, &Default::default())?)
    }

    pub fn pipeline_for(&self, spec: &ScenarioSpec) -> Result<TransformPipeline, Error> {
        Ok(build_pipeline(self.input(), spec)?)
    }

    pub fn whatif(&self, spec: &ScenarioSpec) -> Result<WhatIfReport, Error> {
        self.apply(&self.pipeline_for(spec)?)
    }

    /// Applies `pipeline` to a copy of the graph and compares the predicted
    /// schedule with the baseline.
    pub fn apply(&self, pipeline: &TransformPipeline) -> Result<WhatIfReport, Error> {
        self.apply_against(&self.baseline()?, pipeline)
    }

    /// [`Workload::apply`] with an already simulated baseline.
    pub fn apply_against(&self, base: &SimulationResult, pipeline: &TransformPipeline) -> Result<WhatIfReport, Error> {
        let graph = apply_pipeline(&self.graph, pipeline)?;
        let result = simulate_with(&graph, &pipeline.schedule_policy)?;
        let speedup = if base.makespan == 0 && result.makespan == 0 {
            0.0
        } else {
            sim::speedup(base, &result)?
        };
        Ok(WhatIfReport {
            baseline_makespan: base.makespan,
            predicted_makespan: result.makespan,
            speedup,
            baseline_breakdown: compute_breakdown(base, &self.graph),
            breakdown: compute_breakdown(&result, &graph),
            lane_busy: result.lane_busy.clone(),
            graph,
            result,
        })
    }
}
