//! Synthetic traces with analytically known timing.
//!
//! A [`SyntheticSpec`] lists the tasks of each lane in execution order. The
//! generator derives the dependency structure on its own (lane chains,
//! launch correlations, blocking syncs), lays the tasks out as early as that
//! structure allows and reports the longest weighted path through it.
//!
//! Syncs and blocking copies are resolved by list order, which matches
//! trace order only when every awaited lane is fed solely by the calling
//! CPU thread; other specs are rejected.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{EdgeKind, BLOCKING_DTOH_PREFIX};
use crate::time::{micros_to_nanos, nanos_to_micros, Nanos};
use crate::trace::{
    GradientBucketMap, LaneClass, LaneId, LayerMarker, Phase, TaskKind, TraceDocument, TraceError, TraceEvent,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub name: String,
    pub kind: TaskKind,
    pub duration_us: f64,
    #[serde(default)]
    pub gap_us: f64,
    /// Uniform ±jitter applied to the duration, drawn from the seed.
    #[serde(default)]
    pub jitter_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_target: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
}

impl SyntheticTask {
    pub fn new(name: impl Into<String>, kind: TaskKind, duration_us: f64) -> Self {
        SyntheticTask {
            name: name.into(),
            kind,
            duration_us,
            gap_us: 0.0,
            jitter_us: 0.0,
            correlation: None,
            sync_target: None,
            size_bytes: None,
            layer: None,
            phase: None,
        }
    }

    pub fn gap(mut self, gap_us: f64) -> Self {
        self.gap_us = gap_us;
        self
    }

    pub fn corr(mut self, c: u64) -> Self {
        self.correlation = Some(c);
        self
    }

    pub fn sync_on(mut self, lane: LaneId) -> Self {
        self.sync_target = Some(lane);
        self
    }

    pub fn size(mut self, bytes: u64) -> Self {
        self.size_bytes = Some(bytes);
        self
    }

    pub fn tag(mut self, layer: impl Into<String>, phase: Phase) -> Self {
        self.layer = Some(layer.into());
        self.phase = Some(phase);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLane {
    pub lane: LaneId,
    pub tasks: Vec<SyntheticTask>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub lanes: Vec<SyntheticLane>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_buckets: Option<GradientBucketMap>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl SyntheticSpec {
    pub fn lane(&mut self, lane: LaneId) -> &mut Vec<SyntheticTask> {
        let i = match self.lanes.iter().position(|l| l.lane == lane) {
            Some(i) => i,
            None => {
                self.lanes.push(SyntheticLane { lane, tasks: Vec::new() });
                self.lanes.len() - 1
            }
        };
        &mut self.lanes[i].tasks
    }

    pub fn task_count(&self) -> usize {
        self.lanes.iter().map(|l| l.tasks.len()).sum()
    }
}

/// Generator output: the trace, its predicted makespan and the edge set
/// the generator derived.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub trace: TraceDocument,
    pub makespan: Nanos,
    pub edges: BTreeSet<(u64, u64, EdgeKind)>,
}

fn invalid(msg: impl Into<String>) -> TraceError {
    TraceError::InvalidSpec(msg.into())
}

/// Generates a trace and its longest-path makespan. Deterministic in
/// `(spec, seed)`; the seed only matters for tasks with jitter.
pub fn generate_synthetic_trace(spec: &SyntheticSpec, seed: u64) -> Result<(TraceDocument, Nanos), TraceError> {
    generate(spec, seed).map(|g| (g.trace, g.makespan))
}

struct Flat<'a> {
    lane: &'a LaneId,
    pos: usize,
    task: &'a SyntheticTask,
    duration: Nanos,
    gap: Nanos,
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Generated, TraceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen_lanes = BTreeSet::new();
    let mut flat: Vec<Flat<'_>> = Vec::with_capacity(spec.task_count());
    for l in &spec.lanes {
        if !seen_lanes.insert(&l.lane) {
            return Err(invalid(format!("lane {} declared twice", l.lane)));
        }
        for (pos, t) in l.tasks.iter().enumerate() {
            if t.kind.lane_class() != l.lane.class {
                return Err(invalid(format!("{} task {:?} cannot run on {}", t.kind, t.name, l.lane)));
            }
            let base = micros_to_nanos(t.duration_us)
                .ok_or_else(|| invalid(format!("task {:?} has invalid duration {}", t.name, t.duration_us)))?;
            let gap = micros_to_nanos(t.gap_us)
                .ok_or_else(|| invalid(format!("task {:?} has invalid gap {}", t.name, t.gap_us)))?;
            let jitter = micros_to_nanos(t.jitter_us)
                .ok_or_else(|| invalid(format!("task {:?} has invalid jitter {}", t.name, t.jitter_us)))?;
            let duration = if jitter > 0 {
                let d = base as i128 + rng.random_range(-(jitter as i128)..=jitter as i128);
                d.max(0) as Nanos
            } else {
                base
            };
            if t.sync_target.is_some() && t.kind != TaskKind::Sync {
                return Err(invalid(format!("task {:?} has a sync_target but is not a Sync", t.name)));
            }
            if t.kind.is_gpu() && t.correlation.is_none() {
                return Err(invalid(format!("GPU task {:?} has no correlation", t.name)));
            }
            flat.push(Flat {
                lane: &l.lane,
                pos,
                task: t,
                duration,
                gap: if l.lane.class == LaneClass::CpuThread { gap } else { 0 },
            });
        }
    }
    let n = flat.len();

    // Launchers: exactly one CPU task per correlation id.
    let mut launcher: HashMap<u64, usize> = HashMap::new();
    for (i, f) in flat.iter().enumerate() {
        if let (Some(c), true) = (f.task.correlation, f.lane.class == LaneClass::CpuThread) {
            if launcher.insert(c, i).is_some() {
                return Err(invalid(format!("correlation {c} has two launching calls")));
            }
        }
    }
    let mut launched_by: Vec<Option<usize>> = vec![None; n];
    for (i, f) in flat.iter().enumerate() {
        if f.lane.class == LaneClass::CpuThread {
            continue;
        }
        if let Some(c) = f.task.correlation {
            let l = *launcher.get(&c).ok_or_else(|| invalid(format!("dangling correlation {c}")))?;
            launched_by[i] = Some(l);
        }
    }

    let mut edges: BTreeSet<(usize, usize, EdgeKind)> = BTreeSet::new();
    let mut lane_members: BTreeMap<&LaneId, Vec<usize>> = BTreeMap::new();
    for (i, f) in flat.iter().enumerate() {
        lane_members.entry(f.lane).or_default().push(i);
    }
    for (lane, members) in &lane_members {
        for w in members.windows(2) {
            edges.insert((w[0], w[1], EdgeKind::lane_seq(lane.class)));
        }
    }
    for (i, l) in launched_by.iter().enumerate() {
        if let Some(l) = l {
            edges.insert((*l, i, EdgeKind::LaunchCorrelation));
        }
    }

    // Blocking calls: (call index, awaited lanes).
    let gpu_lanes: Vec<&LaneId> = lane_members.keys().filter(|l| l.class == LaneClass::GpuStream).copied().collect();
    let mut blocking: Vec<(usize, Vec<&LaneId>)> = Vec::new();
    for (i, f) in flat.iter().enumerate() {
        if f.task.kind == TaskKind::Sync {
            let lanes = match &f.task.sync_target {
                Some(t) if t.class == LaneClass::CpuThread => {
                    return Err(invalid(format!("sync {:?} targets a CPU thread", f.task.name)))
                }
                Some(t) => lane_members.get_key_value(t).map(|(k, _)| *k).into_iter().collect(),
                None => gpu_lanes.clone(),
            };
            blocking.push((i, lanes));
        } else if f.task.kind == TaskKind::GpuMemcpy && f.task.name.starts_with(BLOCKING_DTOH_PREFIX) {
            if let Some(l) = launched_by[i] {
                blocking.push((l, vec![f.lane]));
            }
        }
    }
    for (call, lanes) in blocking {
        let cpu = flat[call].lane;
        for lane in lanes {
            let mut awaited = None;
            for &m in &lane_members[lane] {
                match launched_by[m] {
                    Some(l) if flat[l].lane == cpu => {
                        if flat[l].pos < flat[call].pos {
                            awaited = Some(m);
                        }
                    }
                    _ => {
                        return Err(invalid(format!(
                            "call {:?} awaits {lane}, which has work not launched from {cpu}",
                            flat[call].task.name
                        )))
                    }
                }
            }
            if let Some(a) = awaited {
                edges.insert((a, call, EdgeKind::SyncBlock));
            }
        }
    }

    // Topological order.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(a, b, _) in &edges {
        if pairs.insert((a, b)) {
            children[a].push(b);
            indeg[b] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(u) = queue.pop_front() {
        topo.push(u);
        for &c in &children[u] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if topo.len() != n {
        return Err(invalid("spec dependencies form a cycle"));
    }

    // Earliest layout using the declared gaps.
    let mut start = vec![0 as Nanos; n];
    for &u in &topo {
        let release = start[u] + flat[u].duration + flat[u].gap;
        for &c in &children[u] {
            start[c] = start[c].max(release);
        }
    }

    // Gaps as a trace reader will measure them, then the longest path.
    let mut measured = vec![0 as Nanos; n];
    for (lane, members) in &lane_members {
        if lane.class == LaneClass::CpuThread {
            for w in members.windows(2) {
                measured[w[0]] = start[w[1]].saturating_sub(start[w[0]] + flat[w[0]].duration);
            }
        }
    }
    let mut lp = vec![0 as Nanos; n];
    let mut makespan = 0;
    for &u in &topo {
        let release = lp[u] + flat[u].duration + measured[u];
        makespan = makespan.max(lp[u] + flat[u].duration);
        for &c in &children[u] {
            lp[c] = lp[c].max(release);
        }
    }

    let events: Vec<TraceEvent> = flat
        .iter()
        .enumerate()
        .map(|(i, f)| TraceEvent {
            id: i as u64,
            kind: f.task.kind,
            name: f.task.name.clone(),
            lane: f.lane.clone(),
            start: start[i],
            duration: f.duration,
            correlation: f.task.correlation,
            size_bytes: f.task.size_bytes,
            sync_target: f.task.sync_target.clone(),
        })
        .collect();

    let trace = TraceDocument {
        events,
        layer_markers: markers(&flat, &start, &lane_members),
        gradient_buckets: spec.gradient_buckets.clone(),
        metadata: spec.metadata.clone(),
        ..Default::default()
    };
    trace.validate()?;
    Ok(Generated {
        trace,
        makespan,
        edges: edges.into_iter().map(|(a, b, k)| (a as u64, b as u64, k)).collect(),
    })
}

/// One marker per maximal run of equally tagged CPU tasks; zero-length runs
/// get none.
fn markers(flat: &[Flat<'_>], start: &[Nanos], lanes: &BTreeMap<&LaneId, Vec<usize>>) -> Vec<LayerMarker> {
    let mut out = Vec::new();
    for (lane, members) in lanes {
        if lane.class != LaneClass::CpuThread {
            continue;
        }
        let tag = |i: usize| {
            flat[i]
                .task
                .layer
                .as_ref()
                .map(|l| (l.clone(), flat[i].task.phase.unwrap_or(Phase::Forward)))
        };
        let mut run: Option<((String, Phase), Nanos, Nanos)> = None;
        let mut flush = |run: &mut Option<((String, Phase), Nanos, Nanos)>| {
            if let Some(((layer, phase), s, e)) = run.take() {
                if e > s {
                    out.push(LayerMarker {
                        layer,
                        phase,
                        cpu_lane: (*lane).clone(),
                        start: s,
                        end: e,
                    });
                }
            }
        };
        for &i in members {
            let end = start[i] + flat[i].duration;
            match (tag(i), &mut run) {
                (Some(t), Some((rt, _, re))) if *rt == t => *re = end,
                (t, _) => {
                    flush(&mut run);
                    run = t.map(|t| (t, start[i], end));
                }
            }
        }
        flush(&mut run);
    }
    out
}

/// Shape of a randomly drawn spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomShape {
    pub tasks: usize,
    pub cpu_lanes: usize,
    pub streams_per_cpu: usize,
    pub comm_lanes_per_cpu: usize,
    /// Adds a comm lane whose tasks nobody launches.
    pub free_comm_lane: bool,
    /// Probability of a sync call at each CPU step.
    pub sync_prob: f64,
}

impl Default for RandomShape {
    fn default() -> Self {
        RandomShape {
            tasks: 200,
            cpu_lanes: 1,
            streams_per_cpu: 2,
            comm_lanes_per_cpu: 1,
            free_comm_lane: false,
            sync_prob: 0.1,
        }
    }
}

impl RandomShape {
    /// Draws a mixed CPU/GPU/comm shape with about `tasks` tasks.
    pub fn draw(tasks: usize, rng: &mut impl Rng) -> Self {
        RandomShape {
            tasks,
            cpu_lanes: rng.random_range(1..=3),
            streams_per_cpu: rng.random_range(1..=3),
            comm_lanes_per_cpu: rng.random_range(0..=1),
            free_comm_lane: rng.random_bool(0.5),
            sync_prob: rng.random_range(0.0..0.15),
        }
    }
}

fn rand_us(rng: &mut impl Rng, max_ns: u64) -> f64 {
    let ns = if rng.random_bool(0.05) { 0 } else { rng.random_range(0..=max_ns) };
    nanos_to_micros(ns)
}

/// A random spec satisfying the generator's restrictions: streams and comm
/// lanes are partitioned among CPU threads, and device-wide syncs appear
/// only with a single CPU thread.
pub fn random_spec(shape: &RandomShape, seed: u64) -> SyntheticSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = SyntheticSpec::default();
    let cpus: Vec<LaneId> = (0..shape.cpu_lanes.max(1)).map(|c| LaneId::cpu(c.to_string())).collect();
    let streams: Vec<Vec<LaneId>> = (0..cpus.len())
        .map(|c| (0..shape.streams_per_cpu.max(1)).map(|s| LaneId::gpu(format!("{c}:{s}"))).collect())
        .collect();
    let comms: Vec<Vec<LaneId>> = (0..cpus.len())
        .map(|c| (0..shape.comm_lanes_per_cpu).map(|s| LaneId::comm(format!("ring:{c}:{s}"))).collect())
        .collect();
    for c in &cpus {
        spec.lane(c.clone());
    }
    let mut corr = 0u64;
    let mut count = 0usize;
    while count < shape.tasks {
        let c = rng.random_range(0..cpus.len());
        let cpu = cpus[c].clone();
        let roll: f64 = rng.random();
        let gap = rand_us(&mut rng, 3_000);
        if roll < shape.sync_prob {
            let mut t = SyntheticTask::new("cudaStreamSynchronize", TaskKind::Sync, rand_us(&mut rng, 2_000)).gap(gap);
            let scoped = cpus.len() > 1 || rng.random_bool(0.5);
            if scoped {
                let mut targets = streams[c].clone();
                targets.extend(comms[c].iter().cloned());
                t = t.sync_on(targets[rng.random_range(0..targets.len())].clone());
            } else {
                t.name = "cudaDeviceSynchronize".into();
            }
            spec.lane(cpu).push(t);
            count += 1;
        } else if roll < 0.55 {
            let launch = corr;
            corr += 1;
            let comm = !comms[c].is_empty() && rng.random_bool(0.15);
            let (lane, child) = if comm {
                let lane = comms[c][rng.random_range(0..comms[c].len())].clone();
                let t = SyntheticTask::new("allreduce", TaskKind::Comm, rand_us(&mut rng, 80_000))
                    .corr(launch)
                    .size(rng.random_range(1..1 << 24));
                (lane, t)
            } else {
                let lane = streams[c][rng.random_range(0..streams[c].len())].clone();
                let t = match rng.random_range(0..10) {
                    0 => SyntheticTask::new("memcpy_dtoh_async", TaskKind::GpuMemcpy, rand_us(&mut rng, 20_000)),
                    1 => SyntheticTask::new("memcpy_htod_async", TaskKind::GpuMemcpy, rand_us(&mut rng, 20_000)),
                    _ => SyntheticTask::new("volta_sgemm_128x64_nn", TaskKind::GpuKernel, rand_us(&mut rng, 60_000)),
                };
                (lane, t.corr(launch))
            };
            let call = SyntheticTask::new("cudaLaunchKernel", TaskKind::CpuApi, rand_us(&mut rng, 8_000))
                .gap(gap)
                .corr(launch);
            spec.lane(cpu).push(call);
            spec.lane(lane).push(child);
            count += 2;
        } else if roll < 0.62 && shape.free_comm_lane {
            let mut t = SyntheticTask::new("push", TaskKind::Comm, rand_us(&mut rng, 40_000)).size(1 << 20);
            if rng.random_bool(0.3) {
                t.jitter_us = 1.0;
            }
            spec.lane(LaneId::comm("free")).push(t);
            count += 1;
        } else {
            let kind = if rng.random_bool(0.1) { TaskKind::DataLoad } else { TaskKind::CpuOther };
            let mut t = SyntheticTask::new("aten::op", kind, rand_us(&mut rng, 15_000)).gap(gap);
            if rng.random_bool(0.2) {
                t.jitter_us = 2.5;
            }
            spec.lane(cpu).push(t);
            count += 1;
        }
    }
    spec.lanes.retain(|l| !l.tasks.is_empty());
    spec
}
