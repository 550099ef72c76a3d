//! Trace documents: the profiled (or synthetic) event stream the rest of the
//! pipeline consumes.
//!
//! The on-disk form is a JSON document with times in fractional microseconds.
//! [`parse_trace`] converts every timestamp to integer nanoseconds (half-up)
//! and validates the structural invariants; [`TraceDocument::to_json`] is its
//! inverse.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::time::{micros_to_nanos, nanos_to_micros, Nanos};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    CpuApi,
    CpuOther,
    GpuKernel,
    GpuMemcpy,
    DataLoad,
    Comm,
    Sync,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::CpuApi,
        TaskKind::CpuOther,
        TaskKind::GpuKernel,
        TaskKind::GpuMemcpy,
        TaskKind::DataLoad,
        TaskKind::Comm,
        TaskKind::Sync,
    ];

    /// The lane class tasks of this kind execute on.
    pub fn lane_class(self) -> LaneClass {
        match self {
            TaskKind::CpuApi | TaskKind::CpuOther | TaskKind::DataLoad | TaskKind::Sync => {
                LaneClass::CpuThread
            }
            TaskKind::GpuKernel | TaskKind::GpuMemcpy => LaneClass::GpuStream,
            TaskKind::Comm => LaneClass::CommChannel,
        }
    }

    pub fn is_cpu(self) -> bool {
        self.lane_class() == LaneClass::CpuThread
    }

    pub fn is_gpu(self) -> bool {
        self.lane_class() == LaneClass::GpuStream
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::CpuApi => "CpuApi",
            TaskKind::CpuOther => "CpuOther",
            TaskKind::GpuKernel => "GpuKernel",
            TaskKind::GpuMemcpy => "GpuMemcpy",
            TaskKind::DataLoad => "DataLoad",
            TaskKind::Comm => "Comm",
            TaskKind::Sync => "Sync",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LaneClass {
    CpuThread,
    GpuStream,
    CommChannel,
}

impl LaneClass {
    fn prefix(self) -> &'static str {
        match self {
            LaneClass::CpuThread => "cpu",
            LaneClass::GpuStream => "gpu",
            LaneClass::CommChannel => "comm",
        }
    }
}

/// An execution thread: a CPU thread, a GPU stream or a communication channel.
///
/// The canonical text form is `<class>:<key>`, e.g. `cpu:1234`, `gpu:0:7`,
/// `comm:collective`, `comm:channel:1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LaneId {
    pub class: LaneClass,
    pub key: String,
}

impl LaneId {
    pub fn new(class: LaneClass, key: impl Into<String>) -> Self {
        LaneId {
            class,
            key: key.into(),
        }
    }

    pub fn cpu(key: impl Into<String>) -> Self {
        Self::new(LaneClass::CpuThread, key)
    }

    pub fn gpu(key: impl Into<String>) -> Self {
        Self::new(LaneClass::GpuStream, key)
    }

    pub fn comm(key: impl Into<String>) -> Self {
        Self::new(LaneClass::CommChannel, key)
    }

    pub fn collective() -> Self {
        Self::comm("collective")
    }

    pub fn send() -> Self {
        Self::comm("send")
    }

    pub fn recv() -> Self {
        Self::comm("recv")
    }

    pub fn channel(i: usize) -> Self {
        Self::comm(format!("channel:{i}"))
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.class.prefix(), self.key)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid lane id {0:?} (expected cpu:<key>, gpu:<key> or comm:<key>)")]
pub struct LaneParseError(pub String);

impl FromStr for LaneId {
    type Err = LaneParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (prefix, key) = s.split_once(':').ok_or_else(|| LaneParseError(s.to_string()))?;
        let class = match prefix {
            "cpu" => LaneClass::CpuThread,
            "gpu" => LaneClass::GpuStream,
            "comm" => LaneClass::CommChannel,
            _ => return Err(LaneParseError(s.to_string())),
        };
        if key.is_empty() {
            return Err(LaneParseError(s.to_string()));
        }
        Ok(LaneId::new(class, key))
    }
}

impl Serialize for LaneId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LaneId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Forward,
    Backward,
    WeightUpdate,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Forward => "Forward",
            Phase::Backward => "Backward",
            Phase::WeightUpdate => "WeightUpdate",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Forward" | "forward" | "ff" | "FF" => Ok(Phase::Forward),
            "Backward" | "backward" | "bp" | "BP" => Ok(Phase::Backward),
            "WeightUpdate" | "weight_update" | "wu" | "WU" => Ok(Phase::WeightUpdate),
            _ => Err(format!("unknown phase {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub id: u64,
    pub kind: TaskKind,
    pub name: String,
    pub lane: LaneId,
    pub start: Nanos,
    pub duration: Nanos,
    pub correlation: Option<u64>,
    pub size_bytes: Option<u64>,
    /// For sync events, the awaited stream; `None` means device-wide.
    pub sync_target: Option<LaneId>,
}

impl TraceEvent {
    pub fn end(&self) -> Nanos {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMarker {
    pub layer: String,
    pub phase: Phase,
    pub cpu_lane: LaneId,
    pub start: Nanos,
    pub end: Nanos,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradientBucketMap {
    pub bucket_of_layer: BTreeMap<String, usize>,
    pub bucket_size_bytes: BTreeMap<usize, u64>,
    /// Per-layer gradient sizes; needed by parameter-server scenarios that
    /// slice each layer's gradient independently.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub layer_gradient_bytes: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceDocument {
    pub schema_version: u32,
    pub events: Vec<TraceEvent>,
    pub layer_markers: Vec<LayerMarker>,
    pub gradient_buckets: Option<GradientBucketMap>,
    pub metadata: BTreeMap<String, String>,
}

impl Default for TraceDocument {
    fn default() -> Self {
        TraceDocument {
            schema_version: SCHEMA_VERSION,
            events: Vec::new(),
            layer_markers: Vec::new(),
            gradient_buckets: None,
            metadata: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("events {first} and {second} overlap on lane {lane}")]
    OverlapViolation { lane: LaneId, first: u64, second: u64 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

impl TraceError {
    pub fn name(&self) -> &'static str {
        match self {
            TraceError::MalformedDocument(_) => "MalformedDocument",
            TraceError::SchemaViolation(_) => "SchemaViolation",
            TraceError::OverlapViolation { .. } => "OverlapViolation",
            TraceError::InvalidSpec(_) => "InvalidSpec",
        }
    }
}

// Wire representation: times are fractional microseconds.

#[derive(Serialize, Deserialize)]
struct RawDocument {
    schema_version: u32,
    time_unit: String,
    events: Vec<RawEvent>,
    #[serde(default)]
    layer_markers: Vec<RawMarker>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gradient_buckets: Option<GradientBucketMap>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    id: u64,
    kind: TaskKind,
    name: String,
    lane: LaneId,
    start: f64,
    duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    correlation: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sync_target: Option<LaneId>,
}

#[derive(Serialize, Deserialize)]
struct RawMarker {
    layer: String,
    phase: Phase,
    cpu_lane: LaneId,
    start: f64,
    end: f64,
}

fn classify(err: serde_json::Error) -> TraceError {
    use serde_json::error::Category;
    match err.classify() {
        Category::Data => TraceError::SchemaViolation(err.to_string()),
        _ => TraceError::MalformedDocument(err.to_string()),
    }
}

fn to_ns(us: f64, what: &str) -> Result<Nanos, TraceError> {
    micros_to_nanos(us)
        .ok_or_else(|| TraceError::SchemaViolation(format!("{what} must be a finite non-negative time, got {us}")))
}

/// Parses and validates a trace document.
pub fn parse_trace(document_text: &str) -> Result<TraceDocument, TraceError> {
    let raw: RawDocument = serde_json::from_str(document_text).map_err(classify)?;
    if raw.time_unit != "microseconds" && raw.time_unit != "us" {
        return Err(TraceError::SchemaViolation(format!(
            "unsupported time_unit {:?}",
            raw.time_unit
        )));
    }
    let mut events = Vec::with_capacity(raw.events.len());
    for e in raw.events {
        events.push(TraceEvent {
            start: to_ns(e.start, &format!("event {} start", e.id))?,
            duration: to_ns(e.duration, &format!("event {} duration", e.id))?,
            id: e.id,
            kind: e.kind,
            name: e.name,
            lane: e.lane,
            correlation: e.correlation,
            size_bytes: e.size_bytes,
            sync_target: e.sync_target,
        });
    }
    let mut layer_markers = Vec::with_capacity(raw.layer_markers.len());
    for m in raw.layer_markers {
        layer_markers.push(LayerMarker {
            start: to_ns(m.start, "marker start")?,
            end: to_ns(m.end, "marker end")?,
            layer: m.layer,
            phase: m.phase,
            cpu_lane: m.cpu_lane,
        });
    }
    let doc = TraceDocument {
        schema_version: raw.schema_version,
        events,
        layer_markers,
        gradient_buckets: raw.gradient_buckets,
        metadata: raw.metadata,
    };
    doc.validate()?;
    Ok(doc)
}

impl TraceDocument {
    /// Checks every document invariant. Called by [`parse_trace`]; callers
    /// assembling documents in code should call it too.
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(TraceError::SchemaViolation(format!(
                "schema_version must be {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        let mut ids = BTreeSet::new();
        let mut by_lane: HashMap<&LaneId, Vec<&TraceEvent>> = HashMap::new();
        for e in &self.events {
            if !ids.insert(e.id) {
                return Err(TraceError::SchemaViolation(format!("duplicate event id {}", e.id)));
            }
            if e.lane.class != e.kind.lane_class() {
                return Err(TraceError::SchemaViolation(format!(
                    "event {} of kind {} cannot run on lane {}",
                    e.id, e.kind, e.lane
                )));
            }
            if matches!(e.kind, TaskKind::GpuKernel | TaskKind::GpuMemcpy) && e.correlation.is_none() {
                return Err(TraceError::SchemaViolation(format!(
                    "GPU event {} has no correlation id",
                    e.id
                )));
            }
            if let Some(target) = &e.sync_target {
                if e.kind != TaskKind::Sync {
                    return Err(TraceError::SchemaViolation(format!(
                        "event {} has a sync_target but is not a Sync event",
                        e.id
                    )));
                }
                if target.class == LaneClass::CpuThread {
                    return Err(TraceError::SchemaViolation(format!(
                        "sync event {} targets CPU lane {target}",
                        e.id
                    )));
                }
            }
            if e.start.checked_add(e.duration).is_none() {
                return Err(TraceError::SchemaViolation(format!("event {} end overflows", e.id)));
            }
            by_lane.entry(&e.lane).or_default().push(e);
        }
        for (lane, mut evs) in by_lane {
            evs.sort_by_key(|e| (e.start, e.end(), e.id));
            for w in evs.windows(2) {
                if w[0].end() > w[1].start {
                    return Err(TraceError::OverlapViolation {
                        lane: lane.clone(),
                        first: w[0].id,
                        second: w[1].id,
                    });
                }
            }
        }

        let mut marker_groups: HashMap<(&str, Phase, &LaneId), Vec<&LayerMarker>> = HashMap::new();
        for m in &self.layer_markers {
            if m.start >= m.end {
                return Err(TraceError::SchemaViolation(format!(
                    "marker {}/{} has start >= end",
                    m.layer, m.phase
                )));
            }
            if m.cpu_lane.class != LaneClass::CpuThread {
                return Err(TraceError::SchemaViolation(format!(
                    "marker {}/{} is on non-CPU lane {}",
                    m.layer, m.phase, m.cpu_lane
                )));
            }
            marker_groups
                .entry((m.layer.as_str(), m.phase, &m.cpu_lane))
                .or_default()
                .push(m);
        }
        for ((layer, phase, _), mut ms) in marker_groups {
            ms.sort_by_key(|m| m.start);
            if ms.windows(2).any(|w| w[0].end > w[1].start) {
                return Err(TraceError::SchemaViolation(format!(
                    "overlapping markers for {layer}/{phase}"
                )));
            }
        }

        if let Some(b) = &self.gradient_buckets {
            for (layer, idx) in &b.bucket_of_layer {
                if !b.bucket_size_bytes.contains_key(idx) {
                    return Err(TraceError::SchemaViolation(format!(
                        "layer {layer} references unknown bucket {idx}"
                    )));
                }
            }
            if let Some((idx, _)) = b.bucket_size_bytes.iter().find(|(_, &size)| size == 0) {
                return Err(TraceError::SchemaViolation(format!("bucket {idx} has zero size")));
            }
        }
        Ok(())
    }

    fn to_raw(&self) -> RawDocument {
        RawDocument {
            schema_version: self.schema_version,
            time_unit: "microseconds".to_string(),
            events: self
                .events
                .iter()
                .map(|e| RawEvent {
                    id: e.id,
                    kind: e.kind,
                    name: e.name.clone(),
                    lane: e.lane.clone(),
                    start: nanos_to_micros(e.start),
                    duration: nanos_to_micros(e.duration),
                    correlation: e.correlation,
                    size_bytes: e.size_bytes,
                    sync_target: e.sync_target.clone(),
                })
                .collect(),
            layer_markers: self
                .layer_markers
                .iter()
                .map(|m| RawMarker {
                    layer: m.layer.clone(),
                    phase: m.phase,
                    cpu_lane: m.cpu_lane.clone(),
                    start: nanos_to_micros(m.start),
                    end: nanos_to_micros(m.end),
                })
                .collect(),
            gradient_buckets: self.gradient_buckets.clone(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_raw()).expect("trace documents always serialize")
    }

    /// Prints the document in its wire format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("trace documents always serialize")
    }
}
