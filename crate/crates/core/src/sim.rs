//! Frontier-driven discrete-event simulation over a dependency graph.
//!
//! The loop follows the classic list-scheduling recurrence: a policy picks a
//! ready task `u`, which starts at `max(P[lane], ready(u))`; the lane's
//! progress becomes `start + duration + gap`, and every child's ready time is
//! raised to the same value.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::graph::{DependencyGraph, Task, TaskId};
use crate::time::Nanos;
use crate::trace::{LaneId, Phase};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("deadlock: {unscheduled} tasks never became ready")]
    Deadlock { unscheduled: usize },
    #[error("policy chose task {0}, which is not in the frontier")]
    BadChoice(TaskId),
    #[error("baseline makespan is zero")]
    ZeroBaseline,
}

impl SimError {
    pub fn name(&self) -> &'static str {
        match self {
            SimError::Deadlock { .. } => "Deadlock",
            SimError::BadChoice(_) => "BadChoice",
            SimError::ZeroBaseline => "ZeroBaseline",
        }
    }
}

/// A ready task as seen by a schedule policy.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub task: &'a Task,
    pub ready_time: Nanos,
    /// `max(lane progress, ready_time)`: the start the task would get now.
    pub effective_start: Nanos,
}

pub trait SchedulePolicy {
    fn name(&self) -> &str;

    /// Picks one of `candidates` (never empty, sorted by task id) and returns
    /// its task id.
    fn choose(&mut self, candidates: &[Candidate<'_>]) -> TaskId;

    /// Called after each dispatch.
    fn dispatched(&mut self, _task: &Task, _start: Nanos) {}
}

fn earliest<'a, 'b>(candidates: &'b [Candidate<'a>]) -> &'b Candidate<'a> {
    candidates
        .iter()
        .min_by_key(|c| (c.effective_start, c.task.id))
        .expect("candidates are never empty")
}

/// Earliest effective start first, ties by smallest id.
#[derive(Debug, Clone, Copy, Default)]
pub struct EarliestStart;

impl SchedulePolicy for EarliestStart {
    fn name(&self) -> &str {
        "earliest_start"
    }

    fn choose(&mut self, candidates: &[Candidate<'_>]) -> TaskId {
        earliest(candidates).task.id
    }
}

/// Earliest effective start first; among communication tasks tied on start,
/// the higher priority wins.
#[derive(Debug, Clone, Copy, Default)]
pub struct PriorityFirst;

impl SchedulePolicy for PriorityFirst {
    fn name(&self) -> &str {
        "priority"
    }

    fn choose(&mut self, candidates: &[Candidate<'_>]) -> TaskId {
        let mut best = &candidates[0];
        for c in &candidates[1..] {
            if c.effective_start < best.effective_start
                || (c.effective_start == best.effective_start
                    && c.task.is_comm()
                    && best.task.is_comm()
                    && c.task.priority > best.task.priority)
            {
                best = c;
            }
        }
        best.task.id
    }
}

/// Name of the CPU allocation call that starts a prefetch chain.
pub const PREFETCH_MALLOC: &str = "cudaMalloc_vDNN";

/// Holds back prefetch allocations until backward progress designates
/// their layer.
///
/// When a backward task of layer index `j` is dispatched, the closest
/// offloaded layer with index below `j` that has not been designated yet is
/// released. If only held-back tasks are ready, the earliest one runs.
#[derive(Debug, Clone, Default)]
pub struct VdnnPrefetch {
    index: HashMap<String, usize>,
    designated: BTreeSet<String>,
    // offloaded layers seen so far, by layer index
    offloaded: BTreeMap<usize, String>,
}

impl VdnnPrefetch {
    pub fn new(layer_order: &[String]) -> Self {
        VdnnPrefetch {
            index: layer_order.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect(),
            ..Default::default()
        }
    }

    fn held(&self, task: &Task) -> bool {
        task.name == PREFETCH_MALLOC && task.layer.as_ref().is_some_and(|t| !self.designated.contains(&t.layer))
    }
}

impl SchedulePolicy for VdnnPrefetch {
    fn name(&self) -> &str {
        "vdnn_prefetch"
    }

    fn choose(&mut self, candidates: &[Candidate<'_>]) -> TaskId {
        for c in candidates.iter().filter(|c| c.task.name == PREFETCH_MALLOC) {
            if let Some(t) = &c.task.layer {
                if let Some(&i) = self.index.get(&t.layer) {
                    self.offloaded.insert(i, t.layer.clone());
                }
            }
        }
        let free: Vec<Candidate<'_>> = candidates.iter().filter(|c| !self.held(c.task)).copied().collect();
        if !free.is_empty() {
            return earliest(&free).task.id;
        }
        let pick = earliest(candidates);
        if let Some(t) = &pick.task.layer {
            self.designated.insert(t.layer.clone());
        }
        pick.task.id
    }

    fn dispatched(&mut self, task: &Task, _start: Nanos) {
        let Some(tag) = &task.layer else { return };
        if tag.phase != Phase::Backward || task.name == PREFETCH_MALLOC {
            return;
        }
        let Some(&j) = self.index.get(&tag.layer) else { return };
        let next = self
            .offloaded
            .range(..j)
            .rev()
            .map(|(_, l)| l)
            .find(|l| !self.designated.contains(*l))
            .cloned();
        if let Some(l) = next {
            self.designated.insert(l);
        }
    }
}

/// Serializable policy choice carried by pipelines and scenario documents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PolicySpec {
    #[default]
    #[serde(alias = "default")]
    EarliestStart,
    Priority,
    VdnnPrefetch {
        layer_order: Vec<String>,
    },
}

impl PolicySpec {
    pub fn build(&self) -> Box<dyn SchedulePolicy + Send> {
        match self {
            PolicySpec::EarliestStart => Box::new(EarliestStart),
            PolicySpec::Priority => Box::new(PriorityFirst),
            PolicySpec::VdnnPrefetch { layer_order } => Box::new(VdnnPrefetch::new(layer_order)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub start_of: BTreeMap<TaskId, Nanos>,
    pub makespan: Nanos,
    pub lane_busy: BTreeMap<LaneId, Nanos>,
    /// Tasks in dispatch order with their start times.
    pub schedule_trace: Vec<(TaskId, Nanos)>,
}

impl SimulationResult {
    /// `{makespan_ns, starts_ns, lane_busy_ns}` export document.
    pub fn to_document(&self) -> serde_json::Value {
        serde_json::json!({
            "makespan_ns": self.makespan,
            "starts_ns": self.start_of,
            "lane_busy_ns": self.lane_busy,
        })
    }
}

/// Runs the simulation. The graph is not modified.
pub fn simulate(graph: &DependencyGraph, policy: &mut dyn SchedulePolicy) -> Result<SimulationResult, SimError> {
    let tasks: Vec<&Task> = graph.tasks().collect();
    let n = tasks.len();
    let dense: HashMap<TaskId, usize> = tasks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();

    let mut lanes: Vec<&LaneId> = Vec::new();
    let mut lane_ix: HashMap<&LaneId, usize> = HashMap::new();
    let lane_of: Vec<usize> = tasks
        .iter()
        .map(|t| {
            *lane_ix.entry(&t.lane).or_insert_with(|| {
                lanes.push(&t.lane);
                lanes.len() - 1
            })
        })
        .collect();

    let children: Vec<Vec<usize>> = tasks
        .iter()
        .map(|t| graph.children(t.id).iter().map(|c| dense[c]).collect())
        .collect();
    let mut refs: Vec<usize> = vec![0; n];
    for cs in &children {
        for &c in cs {
            refs[c] += 1;
        }
    }
    let mut ready: Vec<Nanos> = tasks.iter().map(|t| t.ready_time).collect();
    let mut progress: Vec<Nanos> = vec![0; lanes.len()];
    // Dense indices follow ascending task id, so this set is id-ordered.
    let mut frontier: BTreeSet<usize> = (0..n).filter(|&i| refs[i] == 0).collect();

    let mut result = SimulationResult::default();
    let mut busy: Vec<Nanos> = vec![0; lanes.len()];
    let mut candidates: Vec<Candidate<'_>> = Vec::new();
    while !frontier.is_empty() {
        candidates.clear();
        candidates.extend(frontier.iter().map(|&i| Candidate {
            task: tasks[i],
            ready_time: ready[i],
            effective_start: progress[lane_of[i]].max(ready[i]),
        }));
        let chosen = policy.choose(&candidates);
        let u = match dense.get(&chosen) {
            Some(&u) if frontier.remove(&u) => u,
            _ => return Err(SimError::BadChoice(chosen)),
        };
        let task = tasks[u];
        let lane = lane_of[u];
        let start = progress[lane].max(ready[u]);
        let finish = start + task.duration + task.gap;
        progress[lane] = finish;
        busy[lane] += task.duration;
        result.start_of.insert(task.id, start);
        result.schedule_trace.push((task.id, start));
        result.makespan = result.makespan.max(start + task.duration);
        for &c in &children[u] {
            ready[c] = ready[c].max(finish);
            refs[c] -= 1;
            if refs[c] == 0 {
                frontier.insert(c);
            }
        }
        policy.dispatched(task, start);
    }
    if result.start_of.len() != n {
        return Err(SimError::Deadlock {
            unscheduled: n - result.start_of.len(),
        });
    }
    result.lane_busy = lanes.iter().zip(busy).map(|(l, b)| ((*l).clone(), b)).collect();
    Ok(result)
}

/// Runs the simulation with the policy described by `spec`.
pub fn simulate_with(graph: &DependencyGraph, spec: &PolicySpec) -> Result<SimulationResult, SimError> {
    let mut policy = spec.build();
    simulate(graph, policy.as_mut())
}

/// `(baseline − variant) / baseline` as a signed fraction.
pub fn speedup(baseline: &SimulationResult, variant: &SimulationResult) -> Result<f64, SimError> {
    if baseline.makespan == 0 {
        return Err(SimError::ZeroBaseline);
    }
    Ok((baseline.makespan as f64 - variant.makespan as f64) / baseline.makespan as f64)
}
