//! Random workloads and the degenerate parameterizations under which every
//! primitive and scenario must leave the makespan unchanged.

use kernelsim_core::fixtures::{LayerSpec, ModelSpec};
use kernelsim_core::graph::{build_graph, DependencyGraph, TaskId};
use kernelsim_core::scenarios::ScenarioSpec;
use kernelsim_core::synthetic::{generate_synthetic_trace, random_spec, RandomShape};
use kernelsim_core::trace::{LaneClass, TaskKind};
use kernelsim_core::transform::{Anchor, InsertParams, NewTask, Placement, Step};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Scenarios with a degenerate parameterization that needs no base.
pub const DEGENERATE: [&str; 9] = [
    "amp",
    "reconstruct_batchnorm",
    "distributed",
    "p3",
    "blueconnect",
    "metaflow",
    "vdnn",
    "gist",
    "custom",
];

pub fn random_graph(seed: u64, tasks: usize) -> DependencyGraph {
    let shape = RandomShape::draw(tasks, &mut ChaCha8Rng::seed_from_u64(seed));
    build_graph(&generate_synthetic_trace(&random_spec(&shape, seed), seed).unwrap().0).unwrap()
}

pub fn zero_task_on(g: &DependencyGraph, id: TaskId) -> NewTask {
    let t = g.task(id).unwrap();
    let kind = match t.lane.class {
        LaneClass::CpuThread => TaskKind::CpuOther,
        LaneClass::GpuStream => TaskKind::GpuKernel,
        LaneClass::CommChannel => TaskKind::Comm,
    };
    NewTask::new(kind, "noop", t.lane.clone(), 0)
}

pub fn insert(task: NewTask, after: Vec<TaskId>, before: Vec<TaskId>, chained: bool) -> Step {
    Step::Insert {
        params: InsertParams {
            task,
            after: after.into_iter().map(Anchor::Id).collect(),
            before: before.into_iter().map(Anchor::Id).collect(),
            placement: Placement::After,
            chained,
            label: None,
        },
    }
}

pub fn random_model(seed: u64) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette = [
        ("conv", "scudnn_conv"),
        ("relu", "elementwise_relu"),
        ("pool", "pooling"),
        ("bn", "batchnorm"),
        ("fc", "volta_sgemm"),
    ];
    let layers = (0..rng.random_range(1..9))
        .map(|i| {
            let (kind, kernel) = palette[rng.random_range(0..palette.len())];
            let grads = if matches!(kind, "conv" | "fc" | "bn") { rng.random_range(1..4_000_000) } else { 0 };
            LayerSpec::new(
                &format!("{kind}{i}"),
                kernel,
                rng.random_range(1..200) as f64,
                rng.random_range(1..400) as f64,
                grads,
            )
        })
        .collect();
    ModelSpec {
        layers,
        launch_us: rng.random_range(0..30) as f64,
        wu_kernels: rng.random_range(1..4),
        wu_us: rng.random_range(1..20) as f64,
        next_forward: rng.random_bool(0.5),
        layers_per_bucket: rng.random_range(0..3),
    }
}

pub fn params(pairs: &[(&str, Value)]) -> serde_json::Map<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

pub fn degenerate(name: &str) -> ScenarioSpec {
    let p = match name {
        "amp" => params(&[("compute_factor", json!(1)), ("memory_factor", json!(1))]),
        "reconstruct_batchnorm" => params(&[("relu_keywords", json!([])), ("bn_keywords", json!([]))]),
        "distributed" => params(&[("workers", json!(1))]),
        "p3" => params(&[("bandwidth_gbps", json!(1_000_000_000_000u64))]),
        "blueconnect" => params(&[]),
        "metaflow" => params(&[]),
        "vdnn" => params(&[("pcie_gbps", Value::Null), ("call_cost_us", json!(0))]),
        "gist" => params(&[("kernel_us", json!(0)), ("launch_cost_us", json!(0)), ("lossy", json!(true))]),
        "custom" => params(&[("pipeline", json!({"steps": []}))]),
        _ => unreachable!(),
    };
    ScenarioSpec {
        scenario: name.into(),
        params: p,
        base: vec![],
    }
}

/// Zero-cost DGC on top of distributed training, and the base alone.
pub fn dgc_over_distributed() -> (ScenarioSpec, ScenarioSpec) {
    let dist = ScenarioSpec::new("distributed").param("workers", 4);
    let dgc = ScenarioSpec::new("dgc")
        .param("compression_ratio", 1.0)
        .param("quantize_us", 0)
        .param("sparse_us", 0)
        .param("decompress_us", 0)
        .param("launch_cost_us", 0)
        .on_top_of(dist.clone());
    (dgc, dist)
}

pub fn pick(g: &DependencyGraph, rng: &mut ChaCha8Rng) -> TaskId {
    let ids: Vec<TaskId> = g.task_ids().collect();
    ids[rng.random_range(0..ids.len())]
}
