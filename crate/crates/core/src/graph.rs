//! Kernel-granularity dependency graph and its construction from a trace.
//!
//! Edges come from exactly five rules: CPU lane order, GPU stream order,
//! launch correlations, synchronization blocking and communication channel
//! order. Transformations add a sixth kind, [`EdgeKind::Injected`].

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::time::Nanos;
use crate::trace::{LaneClass, LaneId, Phase, TaskKind, TraceDocument, TraceEvent};

pub type TaskId = u64;

/// Name prefix that marks a device-to-host copy whose launching call blocks
/// the CPU until earlier work on the same stream finishes.
pub const BLOCKING_DTOH_PREFIX: &str = "memcpy_dtoh";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerTag {
    pub layer: String,
    pub phase: Phase,
}

/// Timing of the task as recorded in the trace. Only used during
/// construction and layer mapping, never by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceTiming {
    pub start: Nanos,
    pub duration: Nanos,
}

impl TraceTiming {
    pub fn end(&self) -> Nanos {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub name: String,
    pub lane: LaneId,
    pub duration: Nanos,
    /// Untraced CPU time between this task's end and its lane successor.
    pub gap: Nanos,
    /// Earliest start allowed by dependencies; 0 until simulation.
    pub ready_time: Nanos,
    pub correlation: Option<u64>,
    pub layer: Option<LayerTag>,
    pub priority: i64,
    pub size_bytes: Option<u64>,
    pub sync_target: Option<LaneId>,
    pub trace: Option<TraceTiming>,
}

impl Task {
    pub fn new(id: TaskId, kind: TaskKind, name: impl Into<String>, lane: LaneId, duration: Nanos) -> Self {
        Task {
            id,
            kind,
            name: name.into(),
            lane,
            duration,
            gap: 0,
            ready_time: 0,
            correlation: None,
            layer: None,
            priority: 0,
            size_bytes: None,
            sync_target: None,
            trace: None,
        }
    }

    fn from_event(e: &TraceEvent) -> Self {
        Task {
            correlation: e.correlation,
            size_bytes: e.size_bytes,
            sync_target: e.sync_target.clone(),
            trace: Some(TraceTiming {
                start: e.start,
                duration: e.duration,
            }),
            ..Task::new(e.id, e.kind, e.name.clone(), e.lane.clone(), e.duration)
        }
    }

    pub fn is_cpu(&self) -> bool {
        self.lane.class == LaneClass::CpuThread
    }

    pub fn is_gpu(&self) -> bool {
        self.lane.class == LaneClass::GpuStream
    }

    pub fn is_comm(&self) -> bool {
        self.lane.class == LaneClass::CommChannel
    }

    pub fn in_layer(&self, layer: &str, phase: Option<Phase>) -> bool {
        match &self.layer {
            Some(tag) => tag.layer == layer && phase.is_none_or(|p| p == tag.phase),
            None => false,
        }
    }

    pub fn phase(&self) -> Option<Phase> {
        self.layer.as_ref().map(|t| t.phase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    LaneSeqCpu,
    LaneSeqGpu,
    LaunchCorrelation,
    SyncBlock,
    CommOrder,
    Injected,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 6] = [
        EdgeKind::LaneSeqCpu,
        EdgeKind::LaneSeqGpu,
        EdgeKind::LaunchCorrelation,
        EdgeKind::SyncBlock,
        EdgeKind::CommOrder,
        EdgeKind::Injected,
    ];

    /// The ordering edge kind used between consecutive tasks of a lane.
    pub fn lane_seq(class: LaneClass) -> EdgeKind {
        match class {
            LaneClass::CpuThread => EdgeKind::LaneSeqCpu,
            LaneClass::GpuStream => EdgeKind::LaneSeqGpu,
            LaneClass::CommChannel => EdgeKind::CommOrder,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::LaneSeqCpu => "LaneSeqCpu",
            EdgeKind::LaneSeqGpu => "LaneSeqGpu",
            EdgeKind::LaunchCorrelation => "LaunchCorrelation",
            EdgeKind::SyncBlock => "SyncBlock",
            EdgeKind::CommOrder => "CommOrder",
            EdgeKind::Injected => "Injected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: TaskId,
    pub to: TaskId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("kernel {task} has correlation {correlation} but no CPU call launched it")]
    OrphanKernel { task: TaskId, correlation: u64 },
    #[error("dependency cycle through tasks {0:?}")]
    CycleDetected(Vec<TaskId>),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("edge endpoint {0} does not exist")]
    DanglingEdge(TaskId),
    #[error("malformed graph document: {0}")]
    MalformedDocument(String),
}

impl GraphError {
    pub fn name(&self) -> &'static str {
        match self {
            GraphError::OrphanKernel { .. } => "OrphanKernel",
            GraphError::CycleDetected(_) => "CycleDetected",
            GraphError::UnknownTask(_) => "UnknownTask",
            GraphError::DanglingEdge(_) => "DanglingEdge",
            GraphError::MalformedDocument(_) => "MalformedDocument",
        }
    }
}

/// Tasks plus typed edges. Every lane keeps its tasks in execution order;
/// tasks inserted without a lane position ("floating" tasks) are serialized
/// on their lane only by the simulator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencyGraph {
    tasks: BTreeMap<TaskId, Task>,
    succ: BTreeMap<TaskId, BTreeSet<(TaskId, EdgeKind)>>,
    pred: BTreeMap<TaskId, BTreeSet<(TaskId, EdgeKind)>>,
    lane_order: BTreeMap<LaneId, Vec<TaskId>>,
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.tasks.get(&id)
    }

    pub fn task_mut(&mut self, id: TaskId) -> Option<&mut Task> {
        self.tasks.get_mut(&id)
    }

    pub fn contains(&self, id: TaskId) -> bool {
        self.tasks.contains_key(&id)
    }

    /// Tasks in ascending id order.
    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tasks.keys().copied()
    }

    pub fn next_id(&self) -> TaskId {
        self.tasks.keys().next_back().map_or(0, |id| id + 1)
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.succ
            .iter()
            .flat_map(|(&from, out)| out.iter().map(move |&(to, kind)| Edge { from, to, kind }))
    }

    pub fn edge_count(&self) -> usize {
        self.succ.values().map(BTreeSet::len).sum()
    }

    pub fn edge_counts_by_kind(&self) -> BTreeMap<EdgeKind, usize> {
        let mut counts: BTreeMap<EdgeKind, usize> = EdgeKind::ALL.iter().map(|&k| (k, 0)).collect();
        for e in self.edges() {
            *counts.entry(e.kind).or_default() += 1;
        }
        counts
    }

    pub fn has_edge(&self, from: TaskId, to: TaskId, kind: EdgeKind) -> bool {
        self.succ.get(&from).is_some_and(|s| s.contains(&(to, kind)))
    }

    /// Distinct child ids (an edge pair may carry several kinds).
    pub fn children(&self, id: TaskId) -> Vec<TaskId> {
        let mut out: Vec<TaskId> = self
            .succ
            .get(&id)
            .into_iter()
            .flatten()
            .map(|&(c, _)| c)
            .collect();
        out.dedup();
        out
    }

    pub fn parents(&self, id: TaskId) -> Vec<TaskId> {
        let mut out: Vec<TaskId> = self
            .pred
            .get(&id)
            .into_iter()
            .flatten()
            .map(|&(p, _)| p)
            .collect();
        out.dedup();
        out
    }

    pub fn out_edges(&self, id: TaskId) -> impl Iterator<Item = (TaskId, EdgeKind)> + '_ {
        self.succ.get(&id).into_iter().flatten().copied()
    }

    pub fn in_edges(&self, id: TaskId) -> impl Iterator<Item = (TaskId, EdgeKind)> + '_ {
        self.pred.get(&id).into_iter().flatten().copied()
    }

    pub fn lanes(&self) -> BTreeSet<LaneId> {
        self.tasks.values().map(|t| t.lane.clone()).collect()
    }

    pub fn lane_order(&self) -> &BTreeMap<LaneId, Vec<TaskId>> {
        &self.lane_order
    }

    pub fn lane_tasks(&self, lane: &LaneId) -> &[TaskId] {
        self.lane_order.get(lane).map_or(&[], Vec::as_slice)
    }

    /// Tasks that belong to a lane but hold no position in its sequence.
    pub fn floating_tasks(&self) -> BTreeSet<TaskId> {
        let chained: BTreeSet<TaskId> = self.lane_order.values().flatten().copied().collect();
        self.tasks.keys().filter(|id| !chained.contains(id)).copied().collect()
    }

    /// The CPU task that launched `id`, found through a correlation edge.
    pub fn launcher_of(&self, id: TaskId) -> Option<TaskId> {
        self.in_edges(id)
            .find(|&(p, k)| {
                (k == EdgeKind::LaunchCorrelation || k == EdgeKind::Injected)
                    && self.tasks.get(&p).is_some_and(|t| t.is_cpu())
                    && self.tasks.get(&id).is_some_and(|t| !t.is_cpu())
                    && self.tasks[&p].correlation.is_some()
                    && self.tasks[&p].correlation == self.tasks[&id].correlation
            })
            .map(|(p, _)| p)
    }

    // Low-level mutation. These maintain adjacency symmetry but not the
    // lane-sequence invariant; the transform primitives own that.

    pub(crate) fn add_task_raw(&mut self, task: Task) {
        let id = task.id;
        self.tasks.insert(id, task);
        self.succ.entry(id).or_default();
        self.pred.entry(id).or_default();
    }

    pub(crate) fn add_edge(&mut self, from: TaskId, to: TaskId, kind: EdgeKind) {
        debug_assert!(self.tasks.contains_key(&from) && self.tasks.contains_key(&to));
        self.succ.entry(from).or_default().insert((to, kind));
        self.pred.entry(to).or_default().insert((from, kind));
    }

    pub(crate) fn remove_edge(&mut self, from: TaskId, to: TaskId, kind: EdgeKind) -> bool {
        let removed = self.succ.get_mut(&from).is_some_and(|s| s.remove(&(to, kind)));
        if let Some(p) = self.pred.get_mut(&to) {
            p.remove(&(from, kind));
        }
        removed
    }

    /// Drops a task and its incident edges, returning it. The lane sequence
    /// entry is removed too but neighbours are not re-linked.
    pub(crate) fn remove_task_raw(&mut self, id: TaskId) -> Option<Task> {
        let task = self.tasks.remove(&id)?;
        for (c, k) in self.succ.remove(&id).unwrap_or_default() {
            if let Some(p) = self.pred.get_mut(&c) {
                p.remove(&(id, k));
            }
        }
        for (p, k) in self.pred.remove(&id).unwrap_or_default() {
            if let Some(s) = self.succ.get_mut(&p) {
                s.remove(&(id, k));
            }
        }
        if let Some(order) = self.lane_order.get_mut(&task.lane) {
            order.retain(|&t| t != id);
            if order.is_empty() {
                self.lane_order.remove(&task.lane);
            }
        }
        Some(task)
    }

    pub(crate) fn lane_order_mut(&mut self, lane: &LaneId) -> &mut Vec<TaskId> {
        self.lane_order.entry(lane.clone()).or_default()
    }

    /// All tasks reachable from `roots` (roots included).
    pub fn descendants(&self, roots: impl IntoIterator<Item = TaskId>) -> BTreeSet<TaskId> {
        self.reach(roots, true)
    }

    /// All tasks that reach one of `roots` (roots included).
    pub fn ancestors(&self, roots: impl IntoIterator<Item = TaskId>) -> BTreeSet<TaskId> {
        self.reach(roots, false)
    }

    fn reach(&self, roots: impl IntoIterator<Item = TaskId>, forward: bool) -> BTreeSet<TaskId> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<TaskId> = VecDeque::new();
        for r in roots {
            if self.tasks.contains_key(&r) && seen.insert(r) {
                queue.push_back(r);
            }
        }
        let adj = if forward { &self.succ } else { &self.pred };
        while let Some(u) = queue.pop_front() {
            for &(v, _) in adj.get(&u).into_iter().flatten() {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Checks lane-sequence connectivity: consecutive lane entries are joined
    /// by the lane's ordering edge kind.
    pub fn check_lane_sequences(&self) -> Result<(), String> {
        for (lane, order) in &self.lane_order {
            let kind = EdgeKind::lane_seq(lane.class);
            for w in order.windows(2) {
                if !self.has_edge(w[0], w[1], kind) {
                    return Err(format!("lane {lane}: {} -> {} lacks a {} edge", w[0], w[1], kind.as_str()));
                }
            }
            for id in order {
                match self.tasks.get(id) {
                    Some(t) if &t.lane == lane => {}
                    _ => return Err(format!("lane {lane} lists foreign task {id}")),
                }
            }
        }
        Ok(())
    }
}

/// Deterministic topological order (Kahn's algorithm, smallest ready id
/// first), or the ids of one cycle.
pub fn verify_acyclic(graph: &DependencyGraph) -> Result<Vec<TaskId>, GraphError> {
    let mut indeg: BTreeMap<TaskId, usize> = graph.task_ids().map(|id| (id, graph.parents(id).len())).collect();
    let mut ready: BTreeSet<TaskId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
    let mut order = Vec::with_capacity(graph.len());
    while let Some(u) = ready.pop_first() {
        order.push(u);
        for c in graph.children(u) {
            let d = indeg.get_mut(&c).expect("child exists");
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() == graph.len() {
        return Ok(order);
    }
    let done: BTreeSet<TaskId> = order.into_iter().collect();
    Err(GraphError::CycleDetected(find_cycle(graph, &done)))
}

fn find_cycle(graph: &DependencyGraph, done: &BTreeSet<TaskId>) -> Vec<TaskId> {
    // Every remaining node has a remaining parent; walk parents until a
    // node repeats.
    let Some(start) = graph.task_ids().find(|id| !done.contains(id)) else {
        return Vec::new();
    };
    let mut path = vec![start];
    let mut pos: HashMap<TaskId, usize> = HashMap::from([(start, 0)]);
    let mut cur = start;
    loop {
        let next = graph
            .parents(cur)
            .into_iter()
            .find(|p| !done.contains(p))
            .expect("nodes left after Kahn always have a pending parent");
        if let Some(&i) = pos.get(&next) {
            let mut cycle = path[i..].to_vec();
            cycle.reverse();
            return cycle;
        }
        pos.insert(next, path.len());
        path.push(next);
        cur = next;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Fail on kernels whose launching call is missing instead of dropping
    /// the edge with a warning.
    pub strict: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub warnings: Vec<String>,
}

/// Builds the dependency graph with default (lenient) options.
pub fn build_graph(trace: &TraceDocument) -> Result<DependencyGraph, GraphError> {
    build_graph_with(trace, BuildOptions::default()).map(|(g, _)| g)
}

pub fn build_graph_with(
    trace: &TraceDocument,
    options: BuildOptions,
) -> Result<(DependencyGraph, BuildReport), GraphError> {
    let mut graph = DependencyGraph::new();
    let mut report = BuildReport::default();
    for e in &trace.events {
        graph.add_task_raw(Task::from_event(e));
    }

    // Lane sequences (CPU threads, GPU streams, communication channels).
    let mut lanes: BTreeMap<LaneId, Vec<&TraceEvent>> = BTreeMap::new();
    for e in &trace.events {
        lanes.entry(e.lane.clone()).or_default().push(e);
    }
    for (lane, mut evs) in lanes {
        evs.sort_by_key(|e| (e.start, e.end(), e.id));
        let kind = EdgeKind::lane_seq(lane.class);
        for w in evs.windows(2) {
            graph.add_edge(w[0].id, w[1].id, kind);
        }
        *graph.lane_order_mut(&lane) = evs.iter().map(|e| e.id).collect();
    }

    // Launch correlations: CPU call -> GPU task (or communication call).
    let mut launcher: HashMap<u64, &TraceEvent> = HashMap::new();
    for e in trace.events.iter().filter(|e| e.kind.is_cpu()) {
        if let Some(c) = e.correlation {
            launcher
                .entry(c)
                .and_modify(|cur| {
                    if (e.start, e.id) < (cur.start, cur.id) {
                        *cur = e;
                    }
                })
                .or_insert(e);
        }
    }
    for e in trace.events.iter().filter(|e| !e.kind.is_cpu()) {
        let Some(c) = e.correlation else { continue };
        match launcher.get(&c) {
            Some(l) => graph.add_edge(l.id, e.id, EdgeKind::LaunchCorrelation),
            None if options.strict => {
                return Err(GraphError::OrphanKernel {
                    task: e.id,
                    correlation: c,
                })
            }
            None => {
                let msg = format!("task {} has correlation {c} with no launching call; edge dropped", e.id);
                log::warn!("{msg}");
                report.warnings.push(msg);
            }
        }
    }

    compute_gaps(&mut graph);
    link_syncs(trace, &mut graph);
    verify_acyclic(&graph)?;
    Ok((graph, report))
}

/// Sets each CPU task's gap to the idle time before its lane successor in
/// the trace. Non-CPU tasks and the last task of each lane get gap 0.
pub fn compute_gaps(graph: &mut DependencyGraph) {
    let updates: Vec<(TaskId, Nanos)> = graph
        .lane_order
        .iter()
        .flat_map(|(lane, order)| {
            let graph = &*graph;
            order.iter().enumerate().map(move |(i, &id)| {
                if lane.class != LaneClass::CpuThread {
                    return (id, 0);
                }
                let gap = match (order.get(i + 1), graph.tasks[&id].trace) {
                    (Some(next), Some(cur)) => match graph.tasks[next].trace {
                        Some(nt) => nt.start.saturating_sub(cur.end()),
                        None => 0,
                    },
                    _ => 0,
                };
                (id, gap)
            })
        })
        .collect();
    for (id, gap) in updates {
        graph.tasks.get_mut(&id).expect("lane task exists").gap = gap;
    }
}

/// Adds the blocking edges of synchronization calls.
///
/// A `Sync` task waits, per awaited stream, for the latest task on that
/// stream whose launching call precedes the sync in CPU-side trace order.
/// The call launching a `memcpy_dtoh*` copy is treated as a sync on the
/// copy's stream.
pub fn link_syncs(trace: &TraceDocument, graph: &mut DependencyGraph) {
    let by_id: HashMap<u64, &TraceEvent> = trace.events.iter().map(|e| (e.id, e)).collect();

    // For every awaitable lane: entries (launch key, lane index, task id)
    // sorted by launch key, with a running maximum of lane index.
    struct LaneIndex {
        keys: Vec<(Nanos, u64)>,
        best: Vec<(usize, TaskId)>,
    }
    let mut indices: BTreeMap<LaneId, LaneIndex> = BTreeMap::new();
    for (lane, order) in &graph.lane_order {
        if lane.class == LaneClass::CpuThread {
            continue;
        }
        let mut entries: Vec<((Nanos, u64), usize, TaskId)> = order
            .iter()
            .enumerate()
            .filter_map(|(idx, &id)| {
                let own = by_id.get(&id)?;
                let key = graph
                    .launcher_of(id)
                    .and_then(|l| by_id.get(&l))
                    .map_or((own.start, own.id), |l| (l.start, l.id));
                Some((key, idx, id))
            })
            .collect();
        entries.sort();
        let mut best = Vec::with_capacity(entries.len());
        let mut cur: Option<(usize, TaskId)> = None;
        for &(_, idx, id) in &entries {
            if cur.is_none_or(|(ci, _)| idx > ci) {
                cur = Some((idx, id));
            }
            best.push(cur.expect("set above"));
        }
        indices.insert(
            lane.clone(),
            LaneIndex {
                keys: entries.iter().map(|e| e.0).collect(),
                best,
            },
        );
    }

    let gpu_lanes: Vec<LaneId> = indices.keys().filter(|l| l.class == LaneClass::GpuStream).cloned().collect();
    let mut blocking: Vec<(&TraceEvent, Vec<LaneId>)> = Vec::new();
    for e in &trace.events {
        if e.kind == TaskKind::Sync {
            let lanes = match &e.sync_target {
                Some(t) => vec![t.clone()],
                None => gpu_lanes.clone(),
            };
            blocking.push((e, lanes));
        } else if e.kind == TaskKind::GpuMemcpy && e.name.starts_with(BLOCKING_DTOH_PREFIX) {
            if let Some(l) = graph.launcher_of(e.id).and_then(|l| by_id.get(&l)) {
                blocking.push((l, vec![e.lane.clone()]));
            }
        }
    }

    for (call, lanes) in blocking {
        for lane in lanes {
            let Some(index) = indices.get(&lane) else { continue };
            let n = index.keys.partition_point(|&k| k < (call.start, call.id));
            if n > 0 {
                let (_, awaited) = index.best[n - 1];
                graph.add_edge(awaited, call.id, EdgeKind::SyncBlock);
            }
        }
    }
}

// Graph document: mirrors the internal fields for export and the service.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDocument {
    pub tasks: Vec<Task>,
    pub edges: Vec<Edge>,
    pub lane_order: BTreeMap<LaneId, Vec<TaskId>>,
}

impl DependencyGraph {
    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            tasks: self.tasks.values().cloned().collect(),
            edges: self.edges().collect(),
            lane_order: self.lane_order.clone(),
        }
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        let mut g = DependencyGraph::new();
        for t in doc.tasks {
            if g.tasks.contains_key(&t.id) {
                return Err(GraphError::MalformedDocument(format!("duplicate task {}", t.id)));
            }
            g.add_task_raw(t);
        }
        for e in doc.edges {
            for end in [e.from, e.to] {
                if !g.tasks.contains_key(&end) {
                    return Err(GraphError::DanglingEdge(end));
                }
            }
            g.add_edge(e.from, e.to, e.kind);
        }
        for (lane, order) in doc.lane_order {
            if let Some(&bad) = order.iter().find(|id| !g.tasks.contains_key(id)) {
                return Err(GraphError::UnknownTask(bad));
            }
            if !order.is_empty() {
                g.lane_order.insert(lane, order);
            }
        }
        g.check_lane_sequences().map_err(GraphError::MalformedDocument)?;
        verify_acyclic(&g)?;
        Ok(g)
    }
}

impl Serialize for DependencyGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DependencyGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = GraphDocument::deserialize(deserializer)?;
        DependencyGraph::from_document(doc).map_err(serde::de::Error::custom)
    }
}
