//! Graph transformation primitives: select, scale, insert, remove and
//! attribute updates, plus the serializable [`TransformPipeline`] that
//! replays them on a copy of a graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{verify_acyclic, DependencyGraph, EdgeKind, GraphError, LayerTag, Task, TaskId};
use crate::sim::PolicySpec;
use crate::time::{Nanos, Ratio};
use crate::trace::{LaneClass, LaneId, Phase, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    All,
    ByKind(TaskKind),
    ByNameSubstring(String),
    ByLayer {
        layer: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phase: Option<Phase>,
    },
    ByLane(LaneClass),
    Ids(Vec<TaskId>),
    And(Vec<Selector>),
    Or(Vec<Selector>),
    Not(Box<Selector>),
}

impl Selector {
    pub fn matches(&self, task: &Task) -> bool {
        match self {
            Selector::All => true,
            Selector::ByKind(k) => task.kind == *k,
            Selector::ByNameSubstring(s) => task.name.contains(s.as_str()),
            Selector::ByLayer { layer, phase } => task.in_layer(layer, *phase),
            Selector::ByLane(class) => task.lane.class == *class,
            Selector::Ids(ids) => ids.contains(&task.id),
            Selector::And(parts) => parts.iter().all(|s| s.matches(task)),
            Selector::Or(parts) => parts.iter().any(|s| s.matches(task)),
            Selector::Not(inner) => !inner.matches(task),
        }
    }

    pub fn gpu() -> Selector {
        Selector::ByLane(LaneClass::GpuStream)
    }

    pub fn name_any<S: AsRef<str>>(keywords: &[S]) -> Selector {
        Selector::Or(
            keywords
                .iter()
                .map(|k| Selector::ByNameSubstring(k.as_ref().to_string()))
                .collect(),
        )
    }

    pub fn and(self, other: Selector) -> Selector {
        Selector::And(vec![self, other])
    }

    pub fn not(self) -> Selector {
        Selector::Not(Box::new(self))
    }
}

/// Ids of the tasks satisfying `sel`.
pub fn select(graph: &DependencyGraph, sel: &Selector) -> BTreeSet<TaskId> {
    graph.tasks().filter(|t| sel.matches(t)).map(|t| t.id).collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("insertion would create a dependency cycle")]
    WouldCreateCycle,
    #[error("unknown anchor {0}")]
    UnknownAnchor(String),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("scale factor must be positive, got {0}")]
    InvalidFactor(String),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("pipeline produced a cyclic graph through {0:?}")]
    AcyclicityViolated(Vec<TaskId>),
}

impl TransformError {
    pub fn name(&self) -> &'static str {
        match self {
            TransformError::WouldCreateCycle => "WouldCreateCycle",
            TransformError::UnknownAnchor(_) => "UnknownAnchor",
            TransformError::UnknownTask(_) => "UnknownTask",
            TransformError::InvalidFactor(_) => "InvalidFactor",
            TransformError::InvalidStep(_) => "InvalidStep",
            TransformError::AcyclicityViolated(_) => "AcyclicityViolated",
        }
    }
}

/// Multiplies the duration of every selected task by `factor` (half-up on
/// nanoseconds). Gaps are left alone. Returns the number of tasks touched.
pub fn scale_durations(graph: &mut DependencyGraph, sel: &Selector, factor: Ratio) -> Result<usize, TransformError> {
    if factor.is_zero() {
        return Err(TransformError::InvalidFactor(factor.to_string()));
    }
    let ids = select(graph, sel);
    for &id in &ids {
        let t = graph.task_mut(id).expect("selected id exists");
        t.duration = factor.scale(t.duration);
    }
    Ok(ids.len())
}

/// Removes a task. Every (parent, child) pair gains a splice edge so the
/// partial order over the remaining tasks is unchanged; lane neighbours are
/// re-linked with the lane's ordering edge. The task's gap is discarded.
pub fn remove_task(graph: &mut DependencyGraph, id: TaskId) -> Result<Task, TransformError> {
    let task = graph.task(id).ok_or(TransformError::UnknownTask(id))?;
    let lane = task.lane.clone();
    let order = graph.lane_tasks(&lane);
    let (prev, next) = match order.iter().position(|&t| t == id) {
        Some(i) => (
            i.checked_sub(1).map(|j| order[j]),
            order.get(i + 1).copied(),
        ),
        None => (None, None),
    };
    let parents = graph.parents(id);
    let children = graph.children(id);
    let removed = graph.remove_task_raw(id).expect("checked above");
    if let (Some(p), Some(n)) = (prev, next) {
        graph.add_edge(p, n, EdgeKind::lane_seq(lane.class));
    }
    for &p in &parents {
        for &c in &children {
            if graph.children(p).contains(&c) {
                continue;
            }
            graph.add_edge(p, c, EdgeKind::Injected);
        }
    }
    Ok(removed)
}

/// Where an inserted task lands in its lane's sequence when anchors leave
/// a choice: right after the last lane task it must follow, or right before
/// the first lane task that must follow it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    After,
    Before,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertOptions {
    pub placement: Placement,
    /// Take a position in the lane sequence. Unchained tasks are only
    /// serialized on their lane by the simulator, leaving their order to the
    /// schedule policy.
    pub chained: bool,
}

impl Default for InsertOptions {
    fn default() -> Self {
        InsertOptions {
            placement: Placement::After,
            chained: true,
        }
    }
}

fn check_anchors(graph: &DependencyGraph, ids: &[TaskId]) -> Result<(), TransformError> {
    match ids.iter().find(|id| !graph.contains(**id)) {
        Some(bad) => Err(TransformError::UnknownAnchor(bad.to_string())),
        None => Ok(()),
    }
}

/// Index in `lane`'s sequence for a task that follows `after` and precedes
/// `before`.
fn lane_position(
    graph: &DependencyGraph,
    lane: &LaneId,
    after: &[TaskId],
    before: &[TaskId],
    placement: Placement,
    before_hint: Option<usize>,
) -> Result<usize, TransformError> {
    let order = graph.lane_tasks(lane);
    let anc = graph.ancestors(after.iter().copied());
    let desc = graph.descendants(before.iter().copied());
    let last_anc = order.iter().rposition(|id| anc.contains(id));
    let mut first_desc = order.iter().position(|id| desc.contains(id));
    if let (Some(a), Some(d)) = (last_anc, first_desc) {
        if a >= d {
            return Err(TransformError::WouldCreateCycle);
        }
    }
    if let Some(h) = before_hint {
        if last_anc.is_none_or(|a| h > a) {
            first_desc = Some(first_desc.map_or(h, |d| d.min(h)));
        }
    }
    let after_pos = last_anc.map(|a| a + 1);
    Ok(match placement {
        Placement::After => after_pos.or(first_desc).unwrap_or(order.len()),
        Placement::Before => first_desc.or(after_pos).unwrap_or(order.len()),
    })
}

fn splice_into_lane(graph: &mut DependencyGraph, id: TaskId, lane: &LaneId, pos: usize) -> Option<(TaskId, TaskId)> {
    let kind = EdgeKind::lane_seq(lane.class);
    let order = graph.lane_tasks(lane).to_vec();
    let prev = pos.checked_sub(1).map(|i| order[i]);
    let next = order.get(pos).copied();
    let mut broken = None;
    if let (Some(p), Some(n)) = (prev, next) {
        if graph.remove_edge(p, n, kind) {
            broken = Some((p, n));
        }
    }
    if let Some(p) = prev {
        graph.add_edge(p, id, kind);
    }
    if let Some(n) = next {
        graph.add_edge(id, n, kind);
    }
    graph.lane_order_mut(lane).insert(pos, id);
    broken
}

fn creates_cycle(graph: &DependencyGraph, id: TaskId) -> bool {
    let children = graph.children(id);
    graph.descendants(children).contains(&id)
}

fn rollback(graph: &mut DependencyGraph, ids: &[TaskId], broken: &[(TaskId, TaskId, LaneClass)]) {
    for &id in ids {
        graph.remove_task_raw(id);
    }
    for &(p, n, class) in broken {
        graph.add_edge(p, n, EdgeKind::lane_seq(class));
    }
}

/// Inserts `task` (its id is replaced by a fresh one) with injected edges
/// from every `after` anchor and to every `before` anchor.
pub fn insert_task(
    graph: &mut DependencyGraph,
    mut task: Task,
    after: &[TaskId],
    before: &[TaskId],
    options: InsertOptions,
) -> Result<TaskId, TransformError> {
    check_anchors(graph, after)?;
    check_anchors(graph, before)?;
    let pos = if options.chained {
        Some(lane_position(graph, &task.lane, after, before, options.placement, None)?)
    } else {
        None
    };
    let id = graph.next_id();
    task.id = id;
    task.ready_time = 0;
    let lane = task.lane.clone();
    graph.add_task_raw(task);
    let mut broken = Vec::new();
    if let Some(pos) = pos {
        if let Some((p, n)) = splice_into_lane(graph, id, &lane, pos) {
            broken.push((p, n, lane.class));
        }
    }
    for &a in after {
        graph.add_edge(a, id, EdgeKind::Injected);
    }
    for &b in before {
        graph.add_edge(id, b, EdgeKind::Injected);
    }
    if creates_cycle(graph, id) {
        rollback(graph, &[id], &broken);
        return Err(TransformError::WouldCreateCycle);
    }
    Ok(id)
}

/// Median of existing CPU launch-call durations (`CpuApi` tasks whose name
/// contains "Launch"); 0 when the graph has none.
pub fn default_launch_cost(graph: &DependencyGraph) -> Nanos {
    median(
        graph
            .tasks()
            .filter(|t| t.kind == TaskKind::CpuApi && t.name.contains("Launch"))
            .map(|t| t.duration),
    )
    .unwrap_or(0)
}

/// Median with the two middle values averaged half-up.
pub fn median(values: impl IntoIterator<Item = Nanos>) -> Option<Nanos> {
    let mut v: Vec<Nanos> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        ((v[n / 2 - 1] as u128 + v[n / 2] as u128 + 1) / 2) as Nanos
    })
}

/// Inserts a GPU task together with the CPU call that launches it.
///
/// The kernel is placed on its stream like [`insert_task`]; the launch goes
/// on `cpu_lane` right after the last CPU call the kernel must follow (or,
/// with [`Placement::Before`], right before the call launching the first
/// `before` anchor). Returns `(launch id, kernel id)`.
pub fn insert_gpu_with_launch(
    graph: &mut DependencyGraph,
    mut kernel: Task,
    cpu_lane: &LaneId,
    after: &[TaskId],
    before: &[TaskId],
    launch_cost: Option<Nanos>,
    placement: Placement,
) -> Result<(TaskId, TaskId), TransformError> {
    if cpu_lane.class != LaneClass::CpuThread {
        return Err(TransformError::InvalidStep(format!("launch lane {cpu_lane} is not a CPU thread")));
    }
    if kernel.lane.class != LaneClass::GpuStream {
        return Err(TransformError::InvalidStep(format!("kernel lane {} is not a GPU stream", kernel.lane)));
    }
    check_anchors(graph, after)?;
    check_anchors(graph, before)?;
    let kernel_pos = lane_position(graph, &kernel.lane, after, before, placement, None)?;
    let cpu_order = graph.lane_tasks(cpu_lane);
    let hint = if placement == Placement::Before {
        before
            .iter()
            .filter_map(|&b| graph.launcher_of(b))
            .filter_map(|l| cpu_order.iter().position(|&t| t == l))
            .min()
    } else {
        None
    };
    let launch_pos = lane_position(graph, cpu_lane, after, before, placement, hint)?;

    let cost = launch_cost.unwrap_or_else(|| default_launch_cost(graph));
    let correlation = graph.tasks().filter_map(|t| t.correlation).max().map_or(0, |c| c + 1);
    let launch_id = graph.next_id();
    let mut launch = Task::new(launch_id, TaskKind::CpuApi, "cudaLaunchKernel", cpu_lane.clone(), cost);
    launch.correlation = Some(correlation);
    launch.layer = kernel.layer.clone();
    graph.add_task_raw(launch);
    let kernel_id = launch_id + 1;
    kernel.id = kernel_id;
    kernel.ready_time = 0;
    kernel.correlation = Some(correlation);
    let kernel_lane = kernel.lane.clone();
    graph.add_task_raw(kernel);

    let mut broken = Vec::new();
    if let Some((p, n)) = splice_into_lane(graph, launch_id, cpu_lane, launch_pos) {
        broken.push((p, n, LaneClass::CpuThread));
    }
    if let Some((p, n)) = splice_into_lane(graph, kernel_id, &kernel_lane, kernel_pos) {
        broken.push((p, n, LaneClass::GpuStream));
    }
    graph.add_edge(launch_id, kernel_id, EdgeKind::Injected);
    for &a in after {
        graph.add_edge(a, kernel_id, EdgeKind::Injected);
    }
    for &b in before {
        graph.add_edge(kernel_id, b, EdgeKind::Injected);
    }
    if creates_cycle(graph, launch_id) || creates_cycle(graph, kernel_id) {
        rollback(graph, &[launch_id, kernel_id], &broken);
        return Err(TransformError::WouldCreateCycle);
    }
    Ok((launch_id, kernel_id))
}

/// Reference to an existing task in a pipeline: a task id, or the label a
/// previous insert step gave to the task it created.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Anchor {
    Id(TaskId),
    Label(String),
}

/// A task description for insert steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewTask {
    pub kind: TaskKind,
    pub name: String,
    pub lane: LaneId,
    pub duration_ns: Nanos,
    #[serde(default)]
    pub gap_ns: Nanos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<LayerTag>,
    #[serde(default)]
    pub priority: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_bytes: Option<u64>,
}

impl NewTask {
    pub fn new(kind: TaskKind, name: impl Into<String>, lane: LaneId, duration_ns: Nanos) -> Self {
        NewTask {
            kind,
            name: name.into(),
            lane,
            duration_ns,
            gap_ns: 0,
            layer: None,
            priority: 0,
            size_bytes: None,
        }
    }

    pub fn with_layer(mut self, layer: Option<LayerTag>) -> Self {
        self.layer = layer;
        self
    }

    pub fn with_priority(mut self, priority: i64) -> Self {
        self.priority = priority;
        self
    }

    pub fn with_size(mut self, size: u64) -> Self {
        self.size_bytes = Some(size);
        self
    }

    /// Describes an existing task, e.g. to reinsert it elsewhere.
    pub fn like(task: &Task) -> Self {
        NewTask {
            kind: task.kind,
            name: task.name.clone(),
            lane: task.lane.clone(),
            duration_ns: task.duration,
            gap_ns: task.gap,
            layer: task.layer.clone(),
            priority: task.priority,
            size_bytes: task.size_bytes,
        }
    }

    fn to_task(&self) -> Result<Task, TransformError> {
        if self.lane.class != self.kind.lane_class() {
            return Err(TransformError::InvalidStep(format!(
                "task kind {} cannot run on lane {}",
                self.kind, self.lane
            )));
        }
        let mut t = Task::new(0, self.kind, self.name.clone(), self.lane.clone(), self.duration_ns);
        t.gap = if self.kind.is_cpu() { self.gap_ns } else { 0 };
        t.layer = self.layer.clone();
        t.priority = self.priority;
        t.size_bytes = self.size_bytes;
        Ok(t)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub factor: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetDurationParams {
    pub duration_ns: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetPriorityParams {
    pub priority: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertParams {
    pub task: NewTask,
    #[serde(default)]
    pub after: Vec<Anchor>,
    #[serde(default)]
    pub before: Vec<Anchor>,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default = "default_true")]
    pub chained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertGpuParams {
    pub kernel: NewTask,
    pub cpu_lane: LaneId,
    /// Defaults to the median existing launch-call duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub launch_cost_ns: Option<Nanos>,
    #[serde(default)]
    pub after: Vec<Anchor>,
    #[serde(default)]
    pub before: Vec<Anchor>,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Empty {}

/// One primitive invocation: `{"op": ..., "selector": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    Scale { selector: Selector, params: ScaleParams },
    SetDuration { selector: Selector, params: SetDurationParams },
    SetPriority { selector: Selector, params: SetPriorityParams },
    Remove { selector: Selector },
    Insert { params: InsertParams },
    InsertGpuWithLaunch { params: InsertGpuParams },
}

impl Step {
    pub fn scale(selector: Selector, factor: Ratio) -> Step {
        Step::Scale {
            selector,
            params: ScaleParams { factor },
        }
    }

    pub fn set_duration(selector: Selector, duration_ns: Nanos) -> Step {
        Step::SetDuration {
            selector,
            params: SetDurationParams { duration_ns },
        }
    }

    pub fn remove(selector: Selector) -> Step {
        Step::Remove { selector }
    }

    pub fn insert(task: NewTask, after: Vec<Anchor>, before: Vec<Anchor>) -> Step {
        Step::Insert {
            params: InsertParams {
                task,
                after,
                before,
                placement: Placement::After,
                chained: true,
                label: None,
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformPipeline {
    #[serde(default)]
    pub steps: Vec<Step>,
    #[serde(default)]
    pub schedule_policy: PolicySpec,
}

impl TransformPipeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: Step) -> &mut Self {
        self.steps.push(step);
        self
    }

    pub fn extend(&mut self, other: TransformPipeline) {
        self.steps.extend(other.steps);
        if other.schedule_policy != PolicySpec::default() {
            self.schedule_policy = other.schedule_policy;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipelines always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, TransformError> {
        serde_json::from_str(text).map_err(|e| TransformError::InvalidStep(e.to_string()))
    }
}

struct Labels(BTreeMap<String, TaskId>);

impl Labels {
    fn resolve(&self, graph: &DependencyGraph, anchors: &[Anchor]) -> Result<Vec<TaskId>, TransformError> {
        anchors
            .iter()
            .map(|a| match a {
                Anchor::Id(id) if graph.contains(*id) => Ok(*id),
                Anchor::Id(id) => Err(TransformError::UnknownAnchor(id.to_string())),
                Anchor::Label(l) => self
                    .0
                    .get(l)
                    .copied()
                    .filter(|id| graph.contains(*id))
                    .ok_or_else(|| TransformError::UnknownAnchor(l.clone())),
            })
            .collect()
    }

    fn bind(&mut self, label: &Option<String>, id: TaskId) -> Result<(), TransformError> {
        if let Some(l) = label {
            if self.0.insert(l.clone(), id).is_some() {
                return Err(TransformError::InvalidStep(format!("label {l:?} used twice")));
            }
        }
        Ok(())
    }
}

fn apply_step(graph: &mut DependencyGraph, step: &Step, labels: &mut Labels) -> Result<(), TransformError> {
    match step {
        Step::Scale { selector, params } => {
            scale_durations(graph, selector, params.factor)?;
        }
        Step::SetDuration { selector, params } => {
            for id in select(graph, selector) {
                graph.task_mut(id).expect("selected").duration = params.duration_ns;
            }
        }
        Step::SetPriority { selector, params } => {
            for id in select(graph, selector) {
                graph.task_mut(id).expect("selected").priority = params.priority;
            }
        }
        Step::Remove { selector } => {
            for id in select(graph, selector) {
                remove_task(graph, id)?;
            }
        }
        Step::Insert { params } => {
            let after = labels.resolve(graph, &params.after)?;
            let before = labels.resolve(graph, &params.before)?;
            let options = InsertOptions {
                placement: params.placement,
                chained: params.chained,
            };
            let id = insert_task(graph, params.task.to_task()?, &after, &before, options)?;
            labels.bind(&params.label, id)?;
        }
        Step::InsertGpuWithLaunch { params } => {
            let after = labels.resolve(graph, &params.after)?;
            let before = labels.resolve(graph, &params.before)?;
            let (_, kernel) = insert_gpu_with_launch(
                graph,
                params.kernel.to_task()?,
                &params.cpu_lane,
                &after,
                &before,
                params.launch_cost_ns,
                params.placement,
            )?;
            labels.bind(&params.label, kernel)?;
        }
    }
    Ok(())
}

/// Applies the pipeline's steps in order to a copy of `graph`.
pub fn apply_pipeline(graph: &DependencyGraph, pipeline: &TransformPipeline) -> Result<DependencyGraph, TransformError> {
    let mut g = graph.clone();
    let mut labels = Labels(BTreeMap::new());
    for step in &pipeline.steps {
        apply_step(&mut g, step, &mut labels)?;
    }
    match verify_acyclic(&g) {
        Ok(_) => Ok(g),
        Err(GraphError::CycleDetected(c)) => Err(TransformError::AcyclicityViolated(c)),
        Err(e) => Err(TransformError::InvalidStep(e.to_string())),
    }
}

/// Like [`apply_pipeline`], but also hands back the graph after each step.
pub fn apply_pipeline_traced(
    graph: &DependencyGraph,
    pipeline: &TransformPipeline,
) -> Result<Vec<DependencyGraph>, TransformError> {
    let mut g = graph.clone();
    let mut labels = Labels(BTreeMap::new());
    let mut out = Vec::with_capacity(pipeline.steps.len());
    for step in &pipeline.steps {
        apply_step(&mut g, step, &mut labels)?;
        out.push(g.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, EarliestStart};

    fn chain(durations: &[Nanos]) -> DependencyGraph {
        let mut g = DependencyGraph::new();
        let lane = LaneId::cpu("0");
        for (i, &d) in durations.iter().enumerate() {
            g.add_task_raw(Task::new(i as TaskId, TaskKind::CpuOther, format!("t{i}"), lane.clone(), d));
            if i > 0 {
                g.add_edge(i as TaskId - 1, i as TaskId, EdgeKind::LaneSeqCpu);
            }
        }
        *g.lane_order_mut(&lane) = (0..durations.len() as TaskId).collect();
        g
    }

    fn makespan(g: &DependencyGraph) -> Nanos {
        simulate(g, &mut EarliestStart).unwrap().makespan
    }

    #[test]
    fn selectors_compose() {
        let mut g = chain(&[1, 2, 3]);
        g.task_mut(0).unwrap().name = "volta_sgemm_128x64".into();
        g.task_mut(2).unwrap().name = "sgemm_nn".into();
        assert_eq!(select(&g, &Selector::ByNameSubstring("sgemm".into())), BTreeSet::from([0, 2]));
        assert!(select(&g, &Selector::All.not()).is_empty());
        let both = Selector::ByNameSubstring("sgemm".into()).and(Selector::Ids(vec![2, 1]));
        assert_eq!(select(&g, &both), BTreeSet::from([2]));
        assert_eq!(select(&g, &Selector::ByKind(TaskKind::GpuKernel)), BTreeSet::new());
    }

    #[test]
    fn remove_middle_of_chain() {
        let mut g = chain(&[1, 2, 3]);
        remove_task(&mut g, 1).unwrap();
        assert_eq!(makespan(&g), 4);
        assert_eq!(g.lane_tasks(&LaneId::cpu("0")), &[0, 2]);
        g.check_lane_sequences().unwrap();
        assert_eq!(remove_task(&mut g, 9).unwrap_err().name(), "UnknownTask");
    }

    #[test]
    fn remove_everything() {
        let mut g = chain(&[1, 2, 3]);
        for id in 0..3 {
            remove_task(&mut g, id).unwrap();
        }
        assert!(g.is_empty());
        assert_eq!(makespan(&g), 0);
    }

    #[test]
    fn scale_identity_and_rounding() {
        let mut g = chain(&[30_000, 10_000]);
        scale_durations(&mut g, &Selector::All, Ratio::ONE).unwrap();
        assert_eq!(makespan(&g), 40_000);
        scale_durations(&mut g, &Selector::Ids(vec![0]), Ratio::new(1, 3).unwrap()).unwrap();
        scale_durations(&mut g, &Selector::Ids(vec![1]), Ratio::new(1, 2).unwrap()).unwrap();
        assert_eq!(g.task(0).unwrap().duration, 10_000);
        assert_eq!(g.task(1).unwrap().duration, 5_000);
        assert_eq!(
            scale_durations(&mut g, &Selector::All, Ratio::ZERO).unwrap_err().name(),
            "InvalidFactor"
        );
    }

    #[test]
    fn insert_between_and_on_fresh_lane() {
        let mut g = chain(&[5, 5]);
        let t = Task::new(0, TaskKind::CpuOther, "x", LaneId::cpu("0"), 0);
        let id = insert_task(&mut g, t, &[0], &[1], InsertOptions::default()).unwrap();
        assert_eq!(g.lane_tasks(&LaneId::cpu("0")), &[0, id, 1]);
        g.check_lane_sequences().unwrap();
        assert_eq!(makespan(&g), 10);

        let fresh = Task::new(0, TaskKind::Comm, "c", LaneId::comm("send"), 7);
        let cid = insert_task(&mut g, fresh, &[], &[], InsertOptions::default()).unwrap();
        let r = simulate(&g, &mut EarliestStart).unwrap();
        assert_eq!(r.start_of[&cid], 0);
    }

    #[test]
    fn insert_rejects_cycles_and_unknown_anchors() {
        let mut g = chain(&[5, 5, 5]);
        let before = g.clone();
        let t = Task::new(0, TaskKind::CpuOther, "x", LaneId::cpu("1"), 1);
        let err = insert_task(&mut g, t.clone(), &[2], &[0], InsertOptions::default()).unwrap_err();
        assert_eq!(err.name(), "WouldCreateCycle");
        assert_eq!(g, before);
        let err = insert_task(&mut g, t, &[42], &[], InsertOptions::default()).unwrap_err();
        assert_eq!(err.name(), "UnknownAnchor");
    }

    #[test]
    fn gpu_insert_brings_its_launch() {
        let mut g = DependencyGraph::new();
        let kernel = Task::new(0, TaskKind::GpuKernel, "k", LaneId::gpu("0:0"), 20_000);
        let (l, k) =
            insert_gpu_with_launch(&mut g, kernel, &LaneId::cpu("0"), &[], &[], Some(5_000), Placement::After).unwrap();
        assert_eq!(g.launcher_of(k), Some(l));
        assert_eq!(makespan(&g), 25_000);
    }

    #[test]
    fn median_launch_cost() {
        let mut g = chain(&[3, 9, 5, 100]);
        for id in 0..4 {
            let t = g.task_mut(id).unwrap();
            t.kind = TaskKind::CpuApi;
            t.name = "cudaLaunchKernel".into();
        }
        assert_eq!(default_launch_cost(&g), 7);
        assert_eq!(median([4u64]), Some(4));
        assert_eq!(median(Vec::<u64>::new()), None);
    }

    #[test]
    fn pipeline_documents_replay() {
        let g = chain(&[10, 20, 30]);
        let mut p = TransformPipeline::new();
        p.push(Step::scale(Selector::All, Ratio::ONE));
        p.push(Step::Insert {
            params: InsertParams {
                task: NewTask::new(TaskKind::CpuOther, "z", LaneId::cpu("0"), 0),
                after: vec![Anchor::Id(0)],
                before: vec![Anchor::Id(1)],
                placement: Placement::After,
                chained: true,
                label: Some("zero".into()),
            },
        });
        let text = p.to_json();
        let back = TransformPipeline::from_json(&text).unwrap();
        assert_eq!(back, p);
        let a = apply_pipeline(&g, &p).unwrap();
        let b = apply_pipeline(&g, &back).unwrap();
        assert_eq!(a, b);
        assert_eq!(makespan(&a), makespan(&g));
        assert_eq!(apply_pipeline(&g, &TransformPipeline::new()).unwrap(), g);
    }

    #[test]
    fn step_wire_format() {
        let s = Step::scale(Selector::ByNameSubstring("sgemm".into()), Ratio::new(1, 3).unwrap());
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"op": "scale", "selector": {"ByNameSubstring": "sgemm"}, "params": {"factor": "1/3"}})
        );
    }
}
