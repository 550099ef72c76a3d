//! Communication cost model and distributed-training graph injection.
//!
//! Durations are evaluated as exact rationals in nanoseconds and rounded
//! half-up only at the end, so identities like
//! `reduce_scatter + all_gather == allreduce` hold exactly before rounding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::graph::{DependencyGraph, TaskId};
use crate::time::{micros_to_nanos, nanos_to_micros, Nanos, Ratio};
use crate::trace::{GradientBucketMap, LaneClass, LaneId, Phase, TaskKind};
use crate::transform::{apply_pipeline, Anchor, NewTask, Step, TransformError, TransformPipeline};

pub const NANOS_PER_SEC: u128 = 1_000_000_000;
pub const ALLREDUCE_NAME: &str = "allreduce";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommError {
    #[error("group size {0} is below 2")]
    InvalidGroup(u32),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("bucket references layer {0:?}, which has no backward GPU tasks")]
    MissingLayer(String),
    #[error("graph has no weight-update GPU tasks")]
    NoWeightUpdate,
    #[error("trace carries no gradient bucket map")]
    MissingBuckets,
    #[error(transparent)]
    Transform(#[from] TransformError),
}

impl CommError {
    pub fn name(&self) -> &'static str {
        match self {
            CommError::InvalidGroup(_) => "InvalidGroup",
            CommError::InvalidConfig(_) => "InvalidConfig",
            CommError::MissingLayer(_) => "MissingLayer",
            CommError::NoWeightUpdate => "NoWeightUpdate",
            CommError::MissingBuckets => "MissingBuckets",
            CommError::Transform(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub n_workers: u32,
    pub bandwidth_bits_per_sec: u64,
    /// Fixed additive term per primitive.
    pub latency: Nanos,
    /// Parallel channels available to decomposed collectives.
    pub channels: u32,
    /// Multiplier on the bandwidth term; 1 reproduces the ideal model.
    pub contention_factor: Ratio,
}

impl NetworkConfig {
    pub fn new(n_workers: u32, bandwidth_gbps: u64) -> Self {
        NetworkConfig {
            n_workers,
            bandwidth_bits_per_sec: bandwidth_gbps * 1_000_000_000,
            latency: 0,
            channels: 1,
            contention_factor: Ratio::ONE,
        }
    }

    pub fn validate(&self) -> Result<(), CommError> {
        if self.n_workers < 1 {
            return Err(CommError::InvalidConfig("workers must be at least 1".into()));
        }
        if self.bandwidth_bits_per_sec == 0 {
            return Err(CommError::InvalidConfig("bandwidth must be positive".into()));
        }
        if self.channels < 1 {
            return Err(CommError::InvalidConfig("channels must be at least 1".into()));
        }
        if self.contention_factor.is_zero() {
            return Err(CommError::InvalidConfig("contention_factor must be positive".into()));
        }
        Ok(())
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::new(1, 10)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn {
    workers: u32,
    bandwidth_gbps: Ratio,
    #[serde(default)]
    latency_us: f64,
    #[serde(default = "one")]
    channels: u32,
    #[serde(default = "unit_ratio")]
    contention_factor: Ratio,
}

fn one() -> u32 {
    1
}

fn unit_ratio() -> Ratio {
    Ratio::ONE
}

#[derive(Serialize)]
struct WireOut {
    workers: u32,
    bandwidth_gbps: f64,
    latency_us: f64,
    channels: u32,
    contention_factor: Ratio,
}

impl Serialize for NetworkConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        WireOut {
            workers: self.n_workers,
            bandwidth_gbps: self.bandwidth_bits_per_sec as f64 / 1e9,
            latency_us: nanos_to_micros(self.latency),
            channels: self.channels,
            contention_factor: self.contention_factor,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NetworkConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let w = WireIn::deserialize(deserializer)?;
        let cfg = NetworkConfig {
            n_workers: w.workers,
            bandwidth_bits_per_sec: w.bandwidth_gbps.scale(1_000_000_000),
            latency: micros_to_nanos(w.latency_us).ok_or_else(|| D::Error::custom("latency_us must be >= 0"))?,
            channels: w.channels,
            contention_factor: w.contention_factor,
        };
        cfg.validate().map_err(D::Error::custom)?;
        Ok(cfg)
    }
}

/// An exact non-negative rational number of nanoseconds.
#[derive(Debug, Clone, Copy)]
pub struct ExactNanos {
    num: u128,
    den: u128,
}

impl ExactNanos {
    fn new(num: u128, den: u128) -> Self {
        let g = gcd(num, den);
        ExactNanos {
            num: num / g,
            den: den / g,
        }
    }

    pub fn integer(ns: Nanos) -> Self {
        ExactNanos { num: ns as u128, den: 1 }
    }

    pub fn numer(&self) -> u128 {
        self.num
    }

    pub fn denom(&self) -> u128 {
        self.den
    }

    /// Rounded half-up to whole nanoseconds.
    pub fn round(&self) -> Nanos {
        crate::time::div_round_half_up(self.num, self.den).min(u64::MAX as u128) as Nanos
    }
}

impl PartialEq for ExactNanos {
    fn eq(&self, other: &Self) -> bool {
        self.num == other.num && self.den == other.den
    }
}

impl Eq for ExactNanos {}

impl Add for ExactNanos {
    type Output = ExactNanos;

    fn add(self, rhs: ExactNanos) -> ExactNanos {
        let g = gcd(self.den, rhs.den);
        let den = self.den / g * rhs.den;
        ExactNanos::new(
            self.num.saturating_mul(den / self.den) + rhs.num.saturating_mul(den / rhs.den),
            den,
        )
    }
}

impl fmt::Display for ExactNanos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ns", self.num, self.den)
    }
}

fn gcd(a: u128, b: u128) -> u128 {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// `latency + cf · (coef_num / coef_den) · 8·size / bandwidth`.
fn transfer(size_bytes: u64, coef_num: u128, coef_den: u128, cfg: &NetworkConfig) -> ExactNanos {
    let cf = cfg.contention_factor;
    let bits = ExactNanos::new(8 * size_bytes as u128 * NANOS_PER_SEC, cfg.bandwidth_bits_per_sec.max(1) as u128);
    let coef = ExactNanos::new(coef_num * cf.numer() as u128, coef_den * cf.denom() as u128);
    let g1 = gcd(bits.num, coef.den);
    let g2 = gcd(coef.num, bits.den);
    let term = ExactNanos::new(
        (bits.num / g1).saturating_mul(coef.num / g2),
        (bits.den / g2).saturating_mul(coef.den / g1),
    );
    ExactNanos::integer(cfg.latency) + term
}

/// Ring allreduce: `latency + 2(n−1)/n · 8S/B`; zero for a single worker.
pub fn allreduce_exact(size_bytes: u64, cfg: &NetworkConfig) -> ExactNanos {
    let n = cfg.n_workers as u128;
    if n <= 1 {
        return ExactNanos::integer(0);
    }
    transfer(size_bytes, 2 * (n - 1), n, cfg)
}

pub fn allreduce_duration(size_bytes: u64, cfg: &NetworkConfig) -> Nanos {
    allreduce_exact(size_bytes, cfg).round()
}

/// Parameter-server push or pull: `latency + 8S/B`.
pub fn push_pull_exact(size_bytes: u64, cfg: &NetworkConfig) -> ExactNanos {
    transfer(size_bytes, 1, 1, cfg)
}

pub fn push_pull_duration(size_bytes: u64, cfg: &NetworkConfig) -> Nanos {
    push_pull_exact(size_bytes, cfg).round()
}

/// Reduce-scatter within a group of `p`: `latency + (p−1)/p · 8S/B`.
pub fn reduce_scatter_exact(size_bytes: u64, p: u32, cfg: &NetworkConfig) -> Result<ExactNanos, CommError> {
    if p < 2 {
        return Err(CommError::InvalidGroup(p));
    }
    Ok(transfer(size_bytes, p as u128 - 1, p as u128, cfg))
}

pub fn reduce_scatter_duration(size_bytes: u64, p: u32, cfg: &NetworkConfig) -> Result<Nanos, CommError> {
    reduce_scatter_exact(size_bytes, p, cfg).map(|d| d.round())
}

/// All-gather costs the same as reduce-scatter in the ring model.
pub fn all_gather_exact(size_bytes: u64, p: u32, cfg: &NetworkConfig) -> Result<ExactNanos, CommError> {
    reduce_scatter_exact(size_bytes, p, cfg)
}

pub fn all_gather_duration(size_bytes: u64, p: u32, cfg: &NetworkConfig) -> Result<Nanos, CommError> {
    all_gather_exact(size_bytes, p, cfg).map(|d| d.round())
}

/// Per GPU stream, the last backward task of `layer` in stream order.
pub fn last_backward_gpu_tasks(graph: &DependencyGraph, layer: &str) -> Vec<TaskId> {
    graph
        .lane_order()
        .iter()
        .filter(|(lane, _)| lane.class == LaneClass::GpuStream)
        .filter_map(|(_, order)| {
            order
                .iter()
                .rev()
                .find(|id| graph.task(**id).is_some_and(|t| t.in_layer(layer, Some(Phase::Backward))))
                .copied()
        })
        .collect()
}

/// The first weight-update GPU task by traced start (then id).
pub fn earliest_weight_update_gpu(graph: &DependencyGraph) -> Option<TaskId> {
    graph
        .tasks()
        .filter(|t| t.is_gpu() && t.phase() == Some(Phase::WeightUpdate))
        .min_by_key(|t| (t.trace.map(|tt| tt.start), t.id))
        .map(|t| t.id)
}

/// One allreduce per bucket on `comm:collective`, in bucket-index order,
/// each fed by its layers' last backward GPU tasks and gating the first
/// weight-update GPU task.
pub fn distributed_pipeline(
    graph: &DependencyGraph,
    buckets: &GradientBucketMap,
    cfg: &NetworkConfig,
) -> Result<TransformPipeline, CommError> {
    cfg.validate()?;
    let wu = earliest_weight_update_gpu(graph).ok_or(CommError::NoWeightUpdate)?;
    let mut members: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for (layer, &b) in &buckets.bucket_of_layer {
        members.entry(b).or_default().insert(layer);
    }
    let mut pipeline = TransformPipeline::new();
    for (&bucket, &size) in &buckets.bucket_size_bytes {
        let mut after = Vec::new();
        for layer in members.get(&bucket).into_iter().flatten() {
            let tails = last_backward_gpu_tasks(graph, layer);
            if tails.is_empty() {
                return Err(CommError::MissingLayer(layer.to_string()));
            }
            after.extend(tails.into_iter().map(Anchor::Id));
        }
        let task = NewTask::new(
            TaskKind::Comm,
            ALLREDUCE_NAME,
            LaneId::collective(),
            allreduce_duration(size, cfg),
        )
        .with_size(size);
        pipeline.push(Step::insert(task, after, vec![Anchor::Id(wu)]));
    }
    Ok(pipeline)
}

/// Applies [`distributed_pipeline`] to a copy of `graph`.
pub fn insert_distributed(
    graph: &DependencyGraph,
    buckets: &GradientBucketMap,
    cfg: &NetworkConfig,
) -> Result<DependencyGraph, CommError> {
    let p = distributed_pipeline(graph, buckets, cfg)?;
    Ok(apply_pipeline(graph, &p)?)
}
