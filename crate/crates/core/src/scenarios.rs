//! Built-in optimization models, each a generator of a [`TransformPipeline`].
//!
//! Generators only read the graph; the returned pipeline carries explicit
//! task ids and labels so it can be stored, shipped to another process and
//! replayed with [`apply_pipeline`].

use std::collections::{BTreeMap, BTreeSet};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::comm::{
    all_gather_exact, distributed_pipeline, push_pull_duration, reduce_scatter_exact, CommError, NetworkConfig,
    ALLREDUCE_NAME,
};
use crate::graph::{DependencyGraph, LayerTag, Task, TaskId};
use crate::sim::{PolicySpec, PREFETCH_MALLOC};
use crate::time::{micros_to_nanos, Nanos, Ratio};
use crate::trace::{GradientBucketMap, LaneClass, LaneId, Phase, TaskKind};
use crate::transform::{
    apply_pipeline, default_launch_cost, median, Anchor, InsertGpuParams, InsertParams, NewTask, Placement, Selector,
    Step, TransformError, TransformPipeline,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("graph has no weight-update GPU kernels")]
    NoWeightUpdate,
    #[error("no per-layer gradient sizes are available")]
    MissingLayerGradients,
    #[error("bad factorization: {0}")]
    BadFactorization(String),
    #[error("no convolution layer has both forward and backward GPU tasks")]
    MissingConvPairs,
    #[error("compression ratio must be positive, got {0}")]
    BadRatio(f64),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

impl ScenarioError {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioError::UnknownScenario(_) => "UnknownScenario",
            ScenarioError::InvalidParams(_) => "InvalidParams",
            ScenarioError::NoWeightUpdate => "NoWeightUpdate",
            ScenarioError::MissingLayerGradients => "MissingLayerGradients",
            ScenarioError::BadFactorization(_) => "BadFactorization",
            ScenarioError::MissingConvPairs => "MissingConvPairs",
            ScenarioError::BadRatio(_) => "BadRatio",
            ScenarioError::Comm(e) => e.name(),
            ScenarioError::Transform(e) => e.name(),
        }
    }

    /// Whether the request was well formed but the workload lacks what the
    /// scenario needs.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            ScenarioError::NoWeightUpdate
                | ScenarioError::MissingLayerGradients
                | ScenarioError::MissingConvPairs
                | ScenarioError::Comm(CommError::NoWeightUpdate)
                | ScenarioError::Comm(CommError::MissingLayer(_))
                | ScenarioError::Comm(CommError::MissingBuckets)
        )
    }
}

/// What a generator may look at.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioInput<'a> {
    pub graph: &'a DependencyGraph,
    pub buckets: Option<&'a GradientBucketMap>,
}

// ---------------------------------------------------------------------------
// graph helpers

fn lower_contains(haystack: &str, keywords: &[String]) -> bool {
    let h = haystack.to_ascii_lowercase();
    keywords.iter().any(|k| h.contains(&k.to_ascii_lowercase()))
}

fn trace_key(t: &Task) -> (Nanos, TaskId) {
    (t.trace.map_or(Nanos::MAX, |tt| tt.start), t.id)
}

/// GPU tasks of `layer`/`phase`, in traced start order.
fn layer_gpu_tasks<'g>(graph: &'g DependencyGraph, layer: &str, phase: Phase) -> Vec<&'g Task> {
    let mut v: Vec<&Task> = graph.tasks().filter(|t| t.is_gpu() && t.in_layer(layer, Some(phase))).collect();
    v.sort_by_key(|t| trace_key(t));
    v
}

/// Forward GPU tasks of `layer` that precede its first backward GPU task,
/// leaving out later iterations.
fn current_forward<'g>(graph: &'g DependencyGraph, layer: &str) -> Vec<&'g Task> {
    let first_bwd = layer_gpu_tasks(graph, layer, Phase::Backward).first().map(|t| trace_key(t));
    layer_gpu_tasks(graph, layer, Phase::Forward)
        .into_iter()
        .filter(|t| first_bwd.is_none_or(|b| trace_key(t) < b))
        .collect()
}

/// Layers ordered by the first traced start of their forward tasks;
/// layers with no forward tasks follow by first appearance.
pub fn layer_order(graph: &DependencyGraph) -> Vec<String> {
    let mut first: BTreeMap<&str, (u8, Nanos, TaskId)> = BTreeMap::new();
    for t in graph.tasks() {
        let Some(tag) = &t.layer else { continue };
        let (s, id) = trace_key(t);
        let key = (u8::from(tag.phase != Phase::Forward), s, id);
        first
            .entry(tag.layer.as_str())
            .and_modify(|k| *k = (*k).min(key))
            .or_insert(key);
    }
    let mut v: Vec<(&str, (u8, Nanos, TaskId))> = first.into_iter().collect();
    v.sort_by_key(|&(_, k)| k);
    v.into_iter()
        .map(|(l, _)| l.to_string())
        .filter(|l| l != crate::layers::GLOBAL_LAYER)
        .collect()
}

fn first_cpu_lane(graph: &DependencyGraph) -> LaneId {
    graph.lanes().into_iter().find(|l| l.class == LaneClass::CpuThread).unwrap_or_else(|| LaneId::cpu("0"))
}

/// CPU thread that launched `id`, or the first CPU thread.
fn launch_lane(graph: &DependencyGraph, id: TaskId) -> LaneId {
    graph
        .launcher_of(id)
        .and_then(|l| graph.task(l))
        .map(|t| t.lane.clone())
        .unwrap_or_else(|| first_cpu_lane(graph))
}

/// Median duration of GPU kernels whose names contain a keyword, falling
/// back to all GPU kernels.
fn median_kernel(graph: &DependencyGraph, keywords: &[String]) -> Nanos {
    let kernels = || graph.tasks().filter(|t| t.kind == TaskKind::GpuKernel);
    median(kernels().filter(|t| lower_contains(&t.name, keywords)).map(|t| t.duration))
        .or_else(|| median(kernels().map(|t| t.duration)))
        .unwrap_or(0)
}

fn us(v: f64, what: &str) -> Result<Nanos, ScenarioError> {
    micros_to_nanos(v).ok_or_else(|| ScenarioError::InvalidParams(format!("{what} must be a non-negative time")))
}

fn opt_us(v: Option<f64>, what: &str, fallback: impl FnOnce() -> Nanos) -> Result<Nanos, ScenarioError> {
    match v {
        Some(v) => us(v, what),
        None => Ok(fallback()),
    }
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------------------
// parameters

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpParams {
    pub compute_factor: Ratio,
    pub memory_factor: Ratio,
    pub compute_keywords: Vec<String>,
}

impl Default for AmpParams {
    fn default() -> Self {
        AmpParams {
            compute_factor: Ratio::new(1, 3).expect("non-zero"),
            memory_factor: Ratio::new(1, 2).expect("non-zero"),
            compute_keywords: words(&["sgemm", "scudnn"]),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusedAdamParams {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchnormParams {
    pub include_backward: bool,
    pub bn_factor: Ratio,
    pub relu_keywords: Vec<String>,
    pub bn_keywords: Vec<String>,
}

impl Default for BatchnormParams {
    fn default() -> Self {
        BatchnormParams {
            include_backward: false,
            bn_factor: Ratio::new(1, 2).expect("non-zero"),
            relu_keywords: words(&["relu"]),
            bn_keywords: words(&["bn", "batchnorm", "batch_norm"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub workers: u32,
    pub bandwidth_gbps: Ratio,
    pub latency_us: f64,
    pub contention_factor: Ratio,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            workers: 4,
            bandwidth_gbps: Ratio::integer(10),
            latency_us: 0.0,
            contention_factor: Ratio::ONE,
        }
    }
}

impl NetworkParams {
    pub fn config(&self, channels: u32) -> Result<NetworkConfig, ScenarioError> {
        let cfg = NetworkConfig {
            n_workers: self.workers,
            bandwidth_bits_per_sec: self.bandwidth_gbps.scale(1_000_000_000),
            latency: us(self.latency_us, "latency_us")?,
            channels,
            contention_factor: self.contention_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributedParams {
    #[serde(flatten)]
    pub network: NetworkParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct P3Params {
    pub slice_size_bytes: u64,
    pub bandwidth_gbps: Ratio,
    pub latency_us: f64,
    pub contention_factor: Ratio,
    /// Parameter servers slices are spread over, round-robin.
    pub servers: u32,
}

impl Default for P3Params {
    fn default() -> Self {
        P3Params {
            slice_size_bytes: 4_000_000,
            bandwidth_gbps: Ratio::integer(10),
            latency_us: 0.0,
            contention_factor: Ratio::ONE,
            servers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlueConnectParams {
    pub factorization: Vec<u32>,
    /// Defaults to the number of factors.
    pub channels: Option<u32>,
    #[serde(flatten)]
    pub network: NetworkParams,
}

impl Default for BlueConnectParams {
    fn default() -> Self {
        BlueConnectParams {
            factorization: vec![2, 2],
            channels: None,
            network: NetworkParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaflowParams {
    pub remove_layers: Vec<String>,
    pub scale_layers: BTreeMap<String, Ratio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdnnParams {
    /// Host link bandwidth; `null` means copies are free.
    pub pcie_gbps: Option<Ratio>,
    /// Feature-map size used when the layer's GPU tasks carry none.
    pub activation_bytes: u64,
    /// Duration of each inserted CPU call; defaults to the median launch.
    pub call_cost_us: Option<f64>,
    pub conv_keywords: Vec<String>,
}

impl Default for VdnnParams {
    fn default() -> Self {
        VdnnParams {
            pcie_gbps: Some(Ratio::integer(96)),
            activation_bytes: 4_000_000,
            call_cost_us: None,
            conv_keywords: words(&["conv"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GistParams {
    pub lossy: bool,
    /// Duration of each inserted kernel; defaults to the median elementwise
    /// kernel.
    pub kernel_us: Option<f64>,
    pub launch_cost_us: Option<f64>,
    pub elementwise_keywords: Vec<String>,
    pub relu_keywords: Vec<String>,
    pub pool_keywords: Vec<String>,
    pub conv_keywords: Vec<String>,
}

impl Default for GistParams {
    fn default() -> Self {
        GistParams {
            lossy: false,
            kernel_us: None,
            launch_cost_us: None,
            elementwise_keywords: words(&["elementwise"]),
            relu_keywords: words(&["relu"]),
            pool_keywords: words(&["pool"]),
            conv_keywords: words(&["conv"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgcParams {
    pub compression_ratio: f64,
    pub quantize_us: Option<f64>,
    pub sparse_us: Option<f64>,
    pub decompress_us: Option<f64>,
    pub launch_cost_us: Option<f64>,
    pub elementwise_keywords: Vec<String>,
}

impl Default for DgcParams {
    fn default() -> Self {
        DgcParams {
            compression_ratio: 0.01,
            quantize_us: None,
            sparse_us: None,
            decompress_us: None,
            launch_cost_us: None,
            elementwise_keywords: words(&["elementwise"]),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomParams {
    pub pipeline: TransformPipeline,
}

// ---------------------------------------------------------------------------
// generators

/// Compute-bound kernels (by name) shrink by `compute_factor`, every other
/// GPU task by `memory_factor`.
pub fn whatif_amp(_input: ScenarioInput<'_>, p: &AmpParams) -> Result<TransformPipeline, ScenarioError> {
    let compute = Selector::name_any(&p.compute_keywords);
    let mut pipeline = TransformPipeline::new();
    pipeline.push(Step::scale(Selector::gpu().and(compute.clone()), p.compute_factor));
    pipeline.push(Step::scale(Selector::gpu().and(compute.not()), p.memory_factor));
    Ok(pipeline)
}

/// Keeps the first weight-update kernel with the summed duration of all of
/// them; the others go, together with their launching calls.
pub fn whatif_fused_adam(input: ScenarioInput<'_>, _p: &FusedAdamParams) -> Result<TransformPipeline, ScenarioError> {
    let g = input.graph;
    let mut wu: Vec<&Task> = g
        .tasks()
        .filter(|t| t.kind == TaskKind::GpuKernel && t.phase() == Some(Phase::WeightUpdate))
        .collect();
    if wu.is_empty() {
        return Err(ScenarioError::NoWeightUpdate);
    }
    wu.sort_by_key(|t| trace_key(t));
    let total: Nanos = wu.iter().map(|t| t.duration).sum();
    let mut doomed = Vec::new();
    for t in &wu[1..] {
        doomed.push(t.id);
        doomed.extend(g.launcher_of(t.id));
    }
    let mut pipeline = TransformPipeline::new();
    pipeline.push(Step::set_duration(Selector::Ids(vec![wu[0].id]), total));
    if !doomed.is_empty() {
        doomed.sort_unstable();
        doomed.dedup();
        pipeline.push(Step::remove(Selector::Ids(doomed)));
    }
    Ok(pipeline)
}

fn layers_matching(graph: &DependencyGraph, keywords: &[String]) -> Vec<String> {
    let names: BTreeSet<&str> = graph.tasks().filter_map(|t| t.layer.as_ref()).map(|t| t.layer.as_str()).collect();
    names.into_iter().filter(|n| lower_contains(n, keywords)).map(String::from).collect()
}

fn any_layer(layers: &[String], phase: Option<Phase>) -> Selector {
    Selector::Or(
        layers
            .iter()
            .map(|l| Selector::ByLayer {
                layer: l.clone(),
                phase,
            })
            .collect(),
    )
}

/// ReLU GPU work disappears (forward only unless `include_backward`);
/// batch-norm GPU work shrinks by `bn_factor`.
pub fn whatif_reconstruct_batchnorm(
    input: ScenarioInput<'_>,
    p: &BatchnormParams,
) -> Result<TransformPipeline, ScenarioError> {
    let relu = layers_matching(input.graph, &p.relu_keywords);
    let bn = layers_matching(input.graph, &p.bn_keywords);
    let mut pipeline = TransformPipeline::new();
    if !relu.is_empty() {
        let phase = if p.include_backward { None } else { Some(Phase::Forward) };
        pipeline.push(Step::remove(Selector::gpu().and(any_layer(&relu, phase))));
    }
    if !bn.is_empty() {
        pipeline.push(Step::scale(Selector::gpu().and(any_layer(&bn, None)), p.bn_factor));
    }
    Ok(pipeline)
}

pub fn whatif_distributed(input: ScenarioInput<'_>, p: &DistributedParams) -> Result<TransformPipeline, ScenarioError> {
    let buckets = input.buckets.ok_or(CommError::MissingBuckets)?;
    Ok(distributed_pipeline(input.graph, buckets, &p.network.config(1)?)?)
}

/// Gradient bytes per layer: explicit sizes when the trace has them,
/// otherwise each bucket split evenly (rounded up) among its layers.
fn layer_gradients(buckets: &GradientBucketMap) -> BTreeMap<String, u64> {
    if !buckets.layer_gradient_bytes.is_empty() {
        return buckets.layer_gradient_bytes.clone();
    }
    let mut members: BTreeMap<usize, usize> = BTreeMap::new();
    for b in buckets.bucket_of_layer.values() {
        *members.entry(*b).or_default() += 1;
    }
    buckets
        .bucket_of_layer
        .iter()
        .filter_map(|(l, b)| {
            let size = *buckets.bucket_size_bytes.get(b)?;
            Some((l.clone(), size.div_ceil(members[b] as u64)))
        })
        .collect()
}

/// Sliced push/pull per layer between its last backward GPU task and the
/// first forward GPU task of the next iteration, prioritized so layers
/// closer to the input go first.
pub fn whatif_p3(input: ScenarioInput<'_>, p: &P3Params) -> Result<TransformPipeline, ScenarioError> {
    if p.slice_size_bytes == 0 {
        return Err(ScenarioError::InvalidParams("slice_size_bytes must be positive".into()));
    }
    if p.servers == 0 {
        return Err(ScenarioError::InvalidParams("servers must be positive".into()));
    }
    let g = input.graph;
    let cfg = NetworkParams {
        workers: 2,
        bandwidth_gbps: p.bandwidth_gbps,
        latency_us: p.latency_us,
        contention_factor: p.contention_factor,
    }
    .config(1)?;
    let grads = input.buckets.map(layer_gradients).unwrap_or_default();
    if grads.is_empty() {
        return Err(ScenarioError::MissingLayerGradients);
    }
    let order = layer_order(g);
    let mut pipeline = TransformPipeline::new();
    let mut slice_no = 0u64;
    // Gradients appear in backward order; ids follow it so first-come
    // scheduling sees them that way too.
    for (idx, layer) in order.iter().enumerate().rev() {
        let Some(&bytes) = grads.get(layer) else { continue };
        let bwd = layer_gpu_tasks(g, layer, Phase::Backward);
        let Some(u) = bwd.iter().max_by_key(|t| (t.trace.map(|tt| tt.end()), t.id)) else { continue };
        let u_end = u.trace.map_or(0, |tt| tt.end());
        let next_fwd = layer_gpu_tasks(g, layer, Phase::Forward)
            .into_iter()
            .find(|t| t.trace.is_some_and(|tt| tt.start >= u_end));
        let priority = -(idx as i64);
        let mut remaining = bytes;
        while remaining > 0 {
            let s = remaining.min(p.slice_size_bytes);
            let d = push_pull_duration(s, &cfg);
            let push_label = format!("p3:push:{slice_no}");
            let tag = Some(LayerTag {
                layer: layer.clone(),
                phase: Phase::Backward,
            });
            let push = NewTask::new(TaskKind::Comm, format!("push {layer}"), LaneId::send(), d)
                .with_layer(tag.clone())
                .with_priority(priority)
                .with_size(s);
            let pull_lane = if slice_no % p.servers as u64 == 0 { LaneId::send() } else { LaneId::recv() };
            let pull = NewTask::new(TaskKind::Comm, format!("pull {layer}"), pull_lane, d)
                .with_layer(tag)
                .with_priority(priority)
                .with_size(s);
            pipeline.push(Step::Insert {
                params: InsertParams {
                    task: push,
                    after: vec![Anchor::Id(u.id)],
                    before: vec![],
                    placement: Placement::After,
                    chained: false,
                    label: Some(push_label.clone()),
                },
            });
            pipeline.push(Step::Insert {
                params: InsertParams {
                    task: pull,
                    after: vec![Anchor::Label(push_label)],
                    before: next_fwd.iter().map(|t| Anchor::Id(t.id)).collect(),
                    placement: Placement::After,
                    chained: false,
                    label: None,
                },
            });
            remaining -= s;
            slice_no += 1;
        }
    }
    pipeline.schedule_policy = PolicySpec::Priority;
    Ok(pipeline)
}

/// Exact reduce-scatter/all-gather stage durations for one collective of
/// `size` bytes. Stage `i` works on the data left after the earlier stages
/// scattered it.
pub fn blueconnect_stages(
    size: u64,
    factorization: &[u32],
    cfg: &NetworkConfig,
) -> Result<Vec<crate::comm::ExactNanos>, ScenarioError> {
    let mut stages = Vec::with_capacity(factorization.len() * 2);
    let mut sizes = Vec::with_capacity(factorization.len());
    let mut scattered = 1u64;
    for &p in factorization {
        let s = size / scattered;
        sizes.push(s);
        stages.push(reduce_scatter_exact(s, p, cfg)?);
        scattered *= p as u64;
    }
    for (i, &p) in factorization.iter().enumerate().rev() {
        stages.push(all_gather_exact(sizes[i], p, cfg)?);
    }
    Ok(stages)
}

/// Every allreduce becomes a chain of reduce-scatters over the factors
/// followed by all-gathers in reverse, stage `i` on `comm:channel:i`.
pub fn whatif_blueconnect(input: ScenarioInput<'_>, p: &BlueConnectParams) -> Result<TransformPipeline, ScenarioError> {
    let k = p.factorization.len();
    if k == 0 || p.factorization.iter().any(|&f| f < 2) {
        return Err(ScenarioError::BadFactorization(format!(
            "{:?}: factors must be at least 2",
            p.factorization
        )));
    }
    let product: u64 = p.factorization.iter().map(|&f| f as u64).product();
    if product != p.network.workers as u64 {
        return Err(ScenarioError::BadFactorization(format!(
            "{:?} multiplies to {product}, not {} workers",
            p.factorization, p.network.workers
        )));
    }
    let channels = p.channels.unwrap_or(k as u32);
    if (channels as usize) < k {
        return Err(ScenarioError::BadFactorization(format!("{k} stages need {k} channels, have {channels}")));
    }
    let cfg = p.network.config(channels)?;
    let g = input.graph;
    let reduces: Vec<&Task> = g.tasks().filter(|t| t.is_comm() && t.name.contains(ALLREDUCE_NAME)).collect();
    let replaced: BTreeSet<TaskId> = reduces.iter().map(|t| t.id).collect();
    let last_label = |id: TaskId| format!("bc:{id}:last");
    let anchor = |id: TaskId| {
        if replaced.contains(&id) {
            Anchor::Label(last_label(id))
        } else {
            Anchor::Id(id)
        }
    };

    let mut pipeline = TransformPipeline::new();
    for u in &reduces {
        let parents: Vec<Anchor> = g.parents(u.id).into_iter().map(anchor).collect();
        let children: Vec<Anchor> = g
            .children(u.id)
            .into_iter()
            .filter(|c| !replaced.contains(c))
            .map(Anchor::Id)
            .collect();
        pipeline.push(Step::remove(Selector::Ids(vec![u.id])));
        let stages = blueconnect_stages(u.size_bytes.unwrap_or(0), &p.factorization, &cfg)?;
        let mut prev = parents;
        for (i, d) in stages.iter().enumerate() {
            let (name, channel) = if i < k { ("reduce_scatter", i) } else { ("all_gather", 2 * k - 1 - i) };
            let label = if i + 1 == stages.len() {
                last_label(u.id)
            } else {
                format!("bc:{}:{i}", u.id)
            };
            let mut task = NewTask::new(TaskKind::Comm, name, LaneId::channel(channel), d.round())
                .with_layer(u.layer.clone())
                .with_priority(u.priority);
            task.size_bytes = u.size_bytes;
            pipeline.push(Step::Insert {
                params: InsertParams {
                    task,
                    after: prev,
                    before: children.clone(),
                    placement: Placement::After,
                    chained: true,
                    label: Some(label.clone()),
                },
            });
            prev = vec![Anchor::Label(label)];
        }
    }
    Ok(pipeline)
}

pub fn whatif_metaflow(_input: ScenarioInput<'_>, p: &MetaflowParams) -> Result<TransformPipeline, ScenarioError> {
    let mut pipeline = TransformPipeline::new();
    for layer in &p.remove_layers {
        pipeline.push(Step::remove(Selector::gpu().and(Selector::ByLayer {
            layer: layer.clone(),
            phase: None,
        })));
    }
    for (layer, &factor) in &p.scale_layers {
        if factor.is_zero() {
            return Err(ScenarioError::InvalidParams(format!("scale factor for {layer} must be positive")));
        }
        pipeline.push(Step::scale(
            Selector::gpu().and(Selector::ByLayer {
                layer: layer.clone(),
                phase: None,
            }),
            factor,
        ));
    }
    Ok(pipeline)
}

fn copy_duration(bytes: u64, gbps: Option<Ratio>) -> Result<Nanos, ScenarioError> {
    match gbps {
        None => Ok(0),
        Some(r) if r.is_zero() => Err(ScenarioError::InvalidParams("pcie_gbps must be positive".into())),
        Some(r) => {
            let bits_per_sec = r.numer() as u128 * 1_000_000_000;
            let num = 8 * bytes as u128 * 1_000_000_000 * r.denom() as u128;
            Ok(((num + bits_per_sec / 2) / bits_per_sec) as Nanos)
        }
    }
}

fn insert_gpu(
    kernel: NewTask,
    cpu_lane: LaneId,
    launch_cost: Nanos,
    after: Vec<Anchor>,
    before: Vec<Anchor>,
    placement: Placement,
    label: Option<String>,
) -> Step {
    Step::InsertGpuWithLaunch {
        params: InsertGpuParams {
            kernel,
            cpu_lane,
            launch_cost_ns: Some(launch_cost),
            after,
            before,
            placement,
            label,
        },
    }
}

fn chained(task: NewTask, after: Vec<Anchor>, before: Vec<Anchor>, label: Option<String>) -> Step {
    Step::Insert {
        params: InsertParams {
            task,
            after,
            before,
            placement: Placement::Before,
            chained: true,
            label,
        },
    }
}

/// Offloads each convolution layer's feature maps after its forward pass
/// and prefetches them before its backward pass; prefetch allocations wait
/// for the schedule policy to release them.
pub fn whatif_vdnn(input: ScenarioInput<'_>, p: &VdnnParams) -> Result<TransformPipeline, ScenarioError> {
    let g = input.graph;
    let call = opt_us(p.call_cost_us, "call_cost_us", || default_launch_cost(g))?;
    let order = layer_order(g);
    let mut pairs = Vec::new();
    for layer in order.iter().filter(|l| lower_contains(l, &p.conv_keywords)) {
        let bwd = layer_gpu_tasks(g, layer, Phase::Backward);
        let Some(&v) = bwd.first() else { continue };
        let fwd = current_forward(g, layer);
        let Some(&u) = fwd.last() else { continue };
        let tagged: u64 = fwd.iter().filter_map(|t| t.size_bytes).sum();
        let bytes = if tagged > 0 { tagged } else { p.activation_bytes };
        pairs.push((layer, u, v, bytes, copy_duration(bytes, p.pcie_gbps)?));
    }
    if pairs.is_empty() {
        return Err(ScenarioError::MissingConvPairs);
    }
    let copy_lane = |t: &Task, dir: &str| {
        let device = t.lane.key.split(':').next().unwrap_or("0");
        LaneId::gpu(format!("{device}:vdnn_{dir}"))
    };
    let tag = |layer: &str, phase| Some(LayerTag { layer: layer.to_string(), phase });
    let label = |layer: &str, s: &str| format!("vdnn:{layer}:{s}");
    let mut pipeline = TransformPipeline::new();
    for &(layer, u, _, bytes, d) in &pairs {
        pipeline.push(insert_gpu(
            NewTask::new(TaskKind::GpuMemcpy, "cudaMemcpyD2H_vDNN", copy_lane(u, "d2h"), d)
                .with_layer(tag(layer, Phase::Forward))
                .with_size(bytes),
            launch_lane(g, u.id),
            call,
            vec![Anchor::Id(u.id)],
            vec![],
            Placement::After,
            Some(label(layer, "offload")),
        ));
    }
    // prefetches in backward order, so the copy lane runs them in that order
    for &(layer, _, v, bytes, d) in pairs.iter().rev() {
        let cpu = launch_lane(g, v.id);
        let before: Vec<Anchor> = g.launcher_of(v.id).map(Anchor::Id).into_iter().collect();
        let call_task = |name: &str| {
            NewTask::new(TaskKind::CpuApi, name, cpu.clone(), call).with_layer(tag(layer, Phase::Backward))
        };
        pipeline.push(chained(call_task("cudaFree_vDNN"), vec![], before.clone(), Some(label(layer, "free"))));
        pipeline.push(chained(
            call_task(PREFETCH_MALLOC),
            vec![Anchor::Label(label(layer, "free"))],
            before,
            Some(label(layer, "malloc")),
        ));
        pipeline.push(insert_gpu(
            NewTask::new(TaskKind::GpuMemcpy, "cudaMemcpyH2D_vDNN", copy_lane(v, "h2d"), d)
                .with_layer(tag(layer, Phase::Backward))
                .with_size(bytes),
            cpu,
            call,
            vec![Anchor::Label(label(layer, "malloc")), Anchor::Label(label(layer, "offload"))],
            vec![Anchor::Id(v.id)],
            Placement::Before,
            Some(label(layer, "prefetch")),
        ));
    }
    pipeline.schedule_policy = PolicySpec::VdnnPrefetch { layer_order: order };
    Ok(pipeline)
}

/// Encoders after ReLU→Pool(→Conv) forward sequences with matching decoders
/// before the pool layer's backward pass; `lossy` adds precision-reduction
/// kernels after every other forward layer.
pub fn whatif_gist(input: ScenarioInput<'_>, p: &GistParams) -> Result<TransformPipeline, ScenarioError> {
    let g = input.graph;
    let kernel = opt_us(p.kernel_us, "kernel_us", || median_kernel(g, &p.elementwise_keywords))?;
    let launch = opt_us(p.launch_cost_us, "launch_cost_us", || default_launch_cost(g))?;
    let layers: Vec<(String, Vec<&Task>)> = layer_order(g)
        .into_iter()
        .map(|l| {
            let f = current_forward(g, &l);
            (l, f)
        })
        .filter(|(_, f)| !f.is_empty())
        .collect();
    let is = |i: usize, kw: &[String]| layers.get(i).is_some_and(|(l, _)| lower_contains(l, kw));
    let first_of = |i: usize| layers.get(i).map(|(_, f)| f[0].id);
    let mut pipeline = TransformPipeline::new();
    let mut add = |name: String, anchor: &Task, after: Vec<TaskId>, before: Vec<TaskId>, placement: Placement, tag| {
        pipeline.push(insert_gpu(
            NewTask::new(TaskKind::GpuKernel, name, anchor.lane.clone(), kernel).with_layer(tag),
            launch_lane(g, anchor.id),
            launch,
            after.into_iter().map(Anchor::Id).collect(),
            before.into_iter().map(Anchor::Id).collect(),
            placement,
            None,
        ));
    };
    for i in 0..layers.len() {
        if !(is(i, &p.relu_keywords) && is(i + 1, &p.pool_keywords)) {
            continue;
        }
        let (pool, pool_fwd) = &layers[i + 1];
        let codec = if is(i + 2, &p.conv_keywords) { "SSDC" } else { "Binarize" };
        let tail = *pool_fwd.last().expect("non-empty");
        add(
            format!("{codec}_encode"),
            tail,
            vec![tail.id],
            first_of(i + 2).into_iter().collect(),
            Placement::After,
            Some(LayerTag {
                layer: pool.clone(),
                phase: Phase::Forward,
            }),
        );
        if let Some(head) = layer_gpu_tasks(g, pool, Phase::Backward).first() {
            add(
                format!("{codec}_decode"),
                head,
                vec![],
                vec![head.id],
                Placement::Before,
                Some(LayerTag {
                    layer: pool.clone(),
                    phase: Phase::Backward,
                }),
            );
        }
    }
    if p.lossy {
        for i in 0..layers.len() {
            if is(i, &p.relu_keywords) {
                continue;
            }
            let (layer, fwd) = &layers[i];
            let tail = *fwd.last().expect("non-empty");
            add(
                "DPR_encode".to_string(),
                tail,
                vec![tail.id],
                first_of(i + 1).into_iter().collect(),
                Placement::After,
                Some(LayerTag {
                    layer: layer.clone(),
                    phase: Phase::Forward,
                }),
            );
        }
    }
    Ok(pipeline)
}

/// Communication shrinks by the compression ratio; quantize and sparsify
/// kernels run before each collective and a decompression kernel after.
pub fn whatif_dgc(input: ScenarioInput<'_>, p: &DgcParams) -> Result<TransformPipeline, ScenarioError> {
    if !(p.compression_ratio.is_finite() && p.compression_ratio > 0.0) {
        return Err(ScenarioError::BadRatio(p.compression_ratio));
    }
    let ratio = Ratio::from_f64(p.compression_ratio).map_err(|_| ScenarioError::BadRatio(p.compression_ratio))?;
    if ratio.is_zero() {
        return Err(ScenarioError::BadRatio(p.compression_ratio));
    }
    let g = input.graph;
    let est = || median_kernel(g, &p.elementwise_keywords);
    let quantize = opt_us(p.quantize_us, "quantize_us", est)?;
    let sparse = opt_us(p.sparse_us, "sparse_us", est)?;
    let decompress = opt_us(p.decompress_us, "decompress_us", est)?;
    let launch = opt_us(p.launch_cost_us, "launch_cost_us", || default_launch_cost(g))?;
    let comms: Vec<&Task> = g.tasks().filter(|t| t.is_comm()).collect();
    let mut pipeline = TransformPipeline::new();
    if comms.is_empty() {
        return Ok(pipeline);
    }
    pipeline.push(Step::scale(Selector::Ids(comms.iter().map(|t| t.id).collect()), ratio));
    let fallback_gpu = g.lanes().into_iter().find(|l| l.class == LaneClass::GpuStream);
    for r in comms {
        let not_comm = |id: &TaskId| g.task(*id).is_some_and(|t| !t.is_comm());
        let parents: Vec<TaskId> = g.parents(r.id).into_iter().filter(not_comm).collect();
        let children: Vec<TaskId> = g.children(r.id).into_iter().filter(not_comm).collect();
        let gpu_parent = parents.iter().filter_map(|&id| g.task(id)).find(|t| t.is_gpu());
        let gpu_child = children.iter().filter_map(|&id| g.task(id)).find(|t| t.is_gpu());
        let Some(stream) = gpu_parent
            .or(gpu_child)
            .map(|t| t.lane.clone())
            .or_else(|| fallback_gpu.clone())
        else {
            continue;
        };
        let cpu = gpu_parent.or(gpu_child).map_or_else(|| first_cpu_lane(g), |t| launch_lane(g, t.id));
        let q = format!("dgc:{}:quantize", r.id);
        let s = format!("dgc:{}:sparse", r.id);
        let kernel = |name: &str, d| NewTask::new(TaskKind::GpuKernel, name, stream.clone(), d).with_layer(r.layer.clone());
        let mut q_step = insert_gpu(
            kernel("dgc_quantize", quantize),
            cpu.clone(),
            launch,
            parents.iter().map(|&id| Anchor::Id(id)).collect(),
            vec![Anchor::Id(r.id)],
            Placement::After,
            Some(q.clone()),
        );
        pipeline.push(q_step.clone());
        if let Step::InsertGpuWithLaunch { params } = &mut q_step {
            params.kernel = kernel("dgc_sparse", sparse);
            params.after = vec![Anchor::Label(q)];
            params.label = Some(s);
        }
        pipeline.push(q_step);
        pipeline.push(insert_gpu(
            kernel("dgc_decompress", decompress),
            cpu,
            launch,
            vec![Anchor::Id(r.id)],
            children.iter().map(|&id| Anchor::Id(id)).collect(),
            Placement::Before,
            None,
        ));
    }
    Ok(pipeline)
}

pub fn whatif_custom(_input: ScenarioInput<'_>, p: &CustomParams) -> Result<TransformPipeline, ScenarioError> {
    Ok(p.pipeline.clone())
}

// ---------------------------------------------------------------------------
// registry

/// A scenario request: `{"scenario": name, "params": {...}}`. Scenarios in
/// `base` are applied first, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub base: Vec<ScenarioSpec>,
}

impl ScenarioSpec {
    pub fn new(scenario: impl Into<String>) -> Self {
        ScenarioSpec {
            scenario: scenario.into(),
            ..Default::default()
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn on_top_of(mut self, base: ScenarioSpec) -> Self {
        self.base.push(base);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    /// `number`, `integer`, `boolean`, `string`, `list`, `map`, `ratio` or
    /// `pipeline`.
    pub kind: String,
    pub default: Value,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSchema>,
}

type Generator = fn(ScenarioInput<'_>, &Map<String, Value>) -> Result<TransformPipeline, ScenarioError>;

struct Entry {
    name: &'static str,
    description: &'static str,
    params: &'static [(&'static str, &'static str, &'static str)],
    defaults: fn() -> Value,
    generate: Generator,
}

fn parse<P: DeserializeOwned>(params: &Map<String, Value>) -> Result<P, ScenarioError> {
    serde_json::from_value(Value::Object(params.clone())).map_err(|e| ScenarioError::InvalidParams(e.to_string()))
}

macro_rules! entry {
    ($name:literal, $desc:literal, $ty:ty, $f:path, [$(($p:expr, $k:expr, $d:expr)),* $(,)?]) => {
        Entry {
            name: $name,
            description: $desc,
            params: &[$(($p, $k, $d)),*],
            defaults: || serde_json::to_value(<$ty>::default()).expect("params serialize"),
            generate: |input, raw| $f(input, &parse::<$ty>(raw)?),
        }
    };
}

const NETWORK: [(&str, &str, &str); 4] = [
    ("workers", "integer", "number of data-parallel workers"),
    ("bandwidth_gbps", "ratio", "network bandwidth in Gbit/s"),
    ("latency_us", "number", "fixed latency added to each primitive"),
    ("contention_factor", "ratio", "multiplier on the bandwidth term"),
];

fn entries() -> Vec<Entry> {
    vec![
        entry!("amp", "Mixed precision: shrink compute-bound kernels and memory-bound GPU work", AmpParams, whatif_amp, [
            ("compute_factor", "ratio", "scale for kernels matching compute_keywords"),
            ("memory_factor", "ratio", "scale for every other GPU task"),
            ("compute_keywords", "list", "kernel-name keywords of compute-bound kernels"),
        ]),
        entry!("fused_adam", "Fuse all weight-update kernels into one", FusedAdamParams, whatif_fused_adam, []),
        entry!("reconstruct_batchnorm", "Drop ReLU kernels and halve batch-norm kernels", BatchnormParams, whatif_reconstruct_batchnorm, [
            ("include_backward", "boolean", "also remove backward ReLU kernels"),
            ("bn_factor", "ratio", "scale for batch-norm GPU tasks"),
            ("relu_keywords", "list", "layer-name keywords of ReLU layers"),
            ("bn_keywords", "list", "layer-name keywords of batch-norm layers"),
        ]),
        entry!("distributed", "Data-parallel training with one ring allreduce per gradient bucket", DistributedParams, whatif_distributed, [
            (NETWORK[0].0, NETWORK[0].1, NETWORK[0].2),
            (NETWORK[1].0, NETWORK[1].1, NETWORK[1].2),
            (NETWORK[2].0, NETWORK[2].1, NETWORK[2].2),
            (NETWORK[3].0, NETWORK[3].1, NETWORK[3].2),
        ]),
        entry!("p3", "Parameter-server training with sliced, prioritized push/pull", P3Params, whatif_p3, [
            ("slice_size_bytes", "integer", "gradient slice size"),
            ("bandwidth_gbps", "ratio", "network bandwidth in Gbit/s"),
            ("latency_us", "number", "fixed latency added to each push or pull"),
            ("contention_factor", "ratio", "multiplier on the bandwidth term"),
            ("servers", "integer", "parameter servers, assigned round-robin per slice"),
        ]),
        entry!("blueconnect", "Split every allreduce into reduce-scatter and all-gather stages", BlueConnectParams, whatif_blueconnect, [
            ("factorization", "list", "worker-count factors, one stage pair each"),
            ("channels", "integer", "parallel channels (null: one per factor)"),
            (NETWORK[0].0, NETWORK[0].1, NETWORK[0].2),
            (NETWORK[1].0, NETWORK[1].1, NETWORK[1].2),
            (NETWORK[2].0, NETWORK[2].1, NETWORK[2].2),
            (NETWORK[3].0, NETWORK[3].1, NETWORK[3].2),
        ]),
        entry!("metaflow", "Remove or rescale the GPU work of whole layers", MetaflowParams, whatif_metaflow, [
            ("remove_layers", "list", "layers whose GPU tasks are removed"),
            ("scale_layers", "map", "layer to duration factor"),
        ]),
        entry!("vdnn", "Offload convolution feature maps to host memory and prefetch them back", VdnnParams, whatif_vdnn, [
            ("pcie_gbps", "ratio", "host link bandwidth in Gbit/s (null: free copies)"),
            ("activation_bytes", "integer", "feature-map size when the trace has none"),
            ("call_cost_us", "number", "duration of inserted CPU calls (null: median launch)"),
            ("conv_keywords", "list", "layer-name keywords of convolution layers"),
        ]),
        entry!("gist", "Encode feature maps after ReLU/pool layers and decode them for backward", GistParams, whatif_gist, [
            ("lossy", "boolean", "add delayed precision reduction kernels"),
            ("kernel_us", "number", "inserted kernel duration (null: median elementwise kernel)"),
            ("launch_cost_us", "number", "inserted launch duration (null: median launch)"),
            ("elementwise_keywords", "list", "kernel-name keywords used for the duration estimate"),
            ("relu_keywords", "list", "layer-name keywords of ReLU layers"),
            ("pool_keywords", "list", "layer-name keywords of pooling layers"),
            ("conv_keywords", "list", "layer-name keywords of convolution layers"),
        ]),
        entry!("dgc", "Compress gradients around every communication task", DgcParams, whatif_dgc, [
            ("compression_ratio", "number", "scale applied to communication durations"),
            ("quantize_us", "number", "quantize kernel duration (null: median elementwise kernel)"),
            ("sparse_us", "number", "sparsify kernel duration (null: median elementwise kernel)"),
            ("decompress_us", "number", "decompress kernel duration (null: median elementwise kernel)"),
            ("launch_cost_us", "number", "inserted launch duration (null: median launch)"),
            ("elementwise_keywords", "list", "kernel-name keywords used for the duration estimate"),
        ]),
        entry!("custom", "A user-supplied transformation pipeline", CustomParams, whatif_custom, [
            ("pipeline", "pipeline", "steps and schedule policy to apply"),
        ]),
    ]
}

/// All scenarios with their parameter schemas and defaults.
pub fn registry() -> Vec<ScenarioInfo> {
    entries()
        .into_iter()
        .map(|e| {
            let defaults = (e.defaults)();
            ScenarioInfo {
                name: e.name.to_string(),
                description: e.description.to_string(),
                params: e
                    .params
                    .iter()
                    .map(|&(name, kind, description)| ParamSchema {
                        name: name.to_string(),
                        kind: kind.to_string(),
                        default: defaults.get(name).cloned().unwrap_or(Value::Null),
                        description: description.to_string(),
                    })
                    .collect(),
            }
        })
        .collect()
}

fn generate_one(input: ScenarioInput<'_>, spec: &ScenarioSpec) -> Result<TransformPipeline, ScenarioError> {
    let entry = entries()
        .into_iter()
        .find(|e| e.name == spec.scenario)
        .ok_or_else(|| ScenarioError::UnknownScenario(spec.scenario.clone()))?;
    (entry.generate)(input, &spec.params)
}

/// Builds the pipeline for `spec`, applying `base` scenarios first so later
/// generators see the graph they will run on.
pub fn build_pipeline(input: ScenarioInput<'_>, spec: &ScenarioSpec) -> Result<TransformPipeline, ScenarioError> {
    if spec.base.is_empty() {
        return generate_one(input, spec);
    }
    let mut pipeline = TransformPipeline::new();
    let mut graph = input.graph.clone();
    for s in spec.base.iter().chain(std::iter::once(&ScenarioSpec {
        base: Vec::new(),
        ..spec.clone()
    })) {
        let next = build_pipeline(
            ScenarioInput {
                graph: &graph,
                buckets: input.buckets,
            },
            s,
        )?;
        graph = apply_pipeline(&graph, &next)?;
        pipeline.extend(next);
    }
    Ok(pipeline)
}
