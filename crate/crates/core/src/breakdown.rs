//! Runtime decomposition of a simulated schedule into CPU-only, GPU-only,
//! overlapped and idle time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{DependencyGraph, Task};
use crate::sim::SimulationResult;
use crate::time::Nanos;
use crate::trace::{LaneClass, TaskKind};

/// Bucket for tasks without a layer.
pub const UNMAPPED_LAYER: &str = "_unmapped";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTime {
    pub cpu: Nanos,
    pub gpu: Nanos,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub cpu_only: Nanos,
    pub gpu_only: Nanos,
    pub parallel: Nanos,
    pub idle: Nanos,
    pub total: Nanos,
    pub per_layer: BTreeMap<String, LayerTime>,
}

impl BreakdownReport {
    pub fn is_conserved(&self) -> bool {
        self.cpu_only + self.gpu_only + self.parallel + self.idle == self.total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BreakdownOptions {
    pub comm_as_gpu: bool,
    pub dataload_as_cpu: bool,
}

impl Default for BreakdownOptions {
    fn default() -> Self {
        BreakdownOptions {
            comm_as_gpu: true,
            dataload_as_cpu: true,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Cpu,
    Gpu,
}

fn side(task: &Task, opts: BreakdownOptions) -> Option<Side> {
    match task.lane.class {
        LaneClass::CpuThread if task.kind == TaskKind::DataLoad && !opts.dataload_as_cpu => None,
        LaneClass::CpuThread => Some(Side::Cpu),
        LaneClass::GpuStream => Some(Side::Gpu),
        LaneClass::CommChannel => opts.comm_as_gpu.then_some(Side::Gpu),
    }
}

pub fn compute_breakdown(result: &SimulationResult, graph: &DependencyGraph) -> BreakdownReport {
    compute_breakdown_with(result, graph, BreakdownOptions::default())
}

/// Sweeps `[0, makespan)` once, tracking how many CPU and GPU tasks are
/// running between consecutive interval endpoints.
pub fn compute_breakdown_with(
    result: &SimulationResult,
    graph: &DependencyGraph,
    opts: BreakdownOptions,
) -> BreakdownReport {
    // (time, delta_cpu, delta_gpu)
    let mut events: Vec<(Nanos, i64, i64)> = Vec::new();
    for (&id, &start) in &result.start_of {
        let Some(task) = graph.task(id) else { continue };
        if task.duration == 0 {
            continue;
        }
        let end = start + task.duration;
        match side(task, opts) {
            Some(Side::Cpu) => events.extend([(start, 1, 0), (end, -1, 0)]),
            Some(Side::Gpu) => events.extend([(start, 0, 1), (end, 0, -1)]),
            None => {}
        }
    }
    events.sort_unstable();

    let mut report = BreakdownReport {
        total: result.makespan,
        per_layer: per_layer_breakdown_with(graph, opts),
        ..Default::default()
    };
    let (mut cpu, mut gpu, mut at) = (0i64, 0i64, 0);
    for (t, dc, dg) in events {
        let t = t.min(result.makespan);
        let span = t - at;
        match (cpu > 0, gpu > 0) {
            (true, true) => report.parallel += span,
            (true, false) => report.cpu_only += span,
            (false, true) => report.gpu_only += span,
            (false, false) => report.idle += span,
        }
        at = t;
        cpu += dc;
        gpu += dg;
    }
    report.idle += result.makespan - at;
    report
}

pub fn per_layer_breakdown(graph: &DependencyGraph) -> BTreeMap<String, LayerTime> {
    per_layer_breakdown_with(graph, BreakdownOptions::default())
}

/// Summed CPU and GPU durations per layer.
pub fn per_layer_breakdown_with(graph: &DependencyGraph, opts: BreakdownOptions) -> BTreeMap<String, LayerTime> {
    let mut out: BTreeMap<String, LayerTime> = BTreeMap::new();
    for task in graph.tasks() {
        let Some(s) = side(task, opts) else { continue };
        let layer = task.layer.as_ref().map_or(UNMAPPED_LAYER, |t| t.layer.as_str());
        let entry = out.entry(layer.to_string()).or_default();
        match s {
            Side::Cpu => entry.cpu += task.duration,
            Side::Gpu => entry.gpu += task.duration,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Task;
    use crate::trace::LaneId;

    fn run(tasks: &[(TaskKind, LaneId, Nanos, Nanos)]) -> BreakdownReport {
        let mut g = DependencyGraph::new();
        let mut r = SimulationResult::default();
        for (i, (k, lane, start, dur)) in tasks.iter().enumerate() {
            g.add_task_raw(Task::new(i as u64, *k, "t", lane.clone(), *dur));
            r.start_of.insert(i as u64, *start);
            r.makespan = r.makespan.max(start + dur);
        }
        compute_breakdown(&r, &g)
    }

    #[test]
    fn disjoint_and_overlap() {
        let b = run(&[
            (TaskKind::CpuApi, LaneId::cpu("0"), 0, 10),
            (TaskKind::GpuKernel, LaneId::gpu("0:7"), 10, 10),
        ]);
        assert_eq!((b.cpu_only, b.gpu_only, b.parallel, b.idle), (10, 10, 0, 0));
        let b = run(&[
            (TaskKind::CpuApi, LaneId::cpu("0"), 0, 10),
            (TaskKind::GpuKernel, LaneId::gpu("0:7"), 0, 10),
        ]);
        assert_eq!((b.cpu_only, b.gpu_only, b.parallel), (0, 0, 10));
        assert_eq!(run(&[]), BreakdownReport::default());
    }

    #[test]
    fn gaps_are_idle_and_comm_is_gpu() {
        let b = run(&[
            (TaskKind::CpuApi, LaneId::cpu("0"), 0, 5),
            (TaskKind::Comm, LaneId::collective(), 8, 4),
        ]);
        assert_eq!((b.cpu_only, b.gpu_only, b.idle, b.total), (5, 4, 3, 12));
        assert!(b.is_conserved());
        assert_eq!(b.per_layer[UNMAPPED_LAYER], LayerTime { cpu: 5, gpu: 4 });
    }
}
