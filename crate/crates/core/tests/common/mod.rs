#![allow(dead_code)]

pub mod identity;

use std::collections::{BTreeMap, BTreeSet};

use kernelsim_core::graph::{DependencyGraph, Edge, EdgeKind, GraphDocument, Task, TaskId};
use kernelsim_core::sim::SimulationResult;
use kernelsim_core::time::Nanos;
use kernelsim_core::trace::{LaneClass, LaneId, TaskKind, TraceDocument, TraceEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random DAG whose lanes are plain chains, plus the edge list it was
/// built from.
pub struct ChainGraph {
    pub graph: DependencyGraph,
    pub edges: Vec<(usize, usize)>,
    pub dur: Vec<Nanos>,
    pub gap: Vec<Nanos>,
}

pub fn chain_graph(seed: u64, n: usize) -> ChainGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lanes: Vec<(LaneId, TaskKind)> = (0..rng.random_range(1..=6))
        .map(|i| match rng.random_range(0..3) {
            0 => (LaneId::cpu(i.to_string()), TaskKind::CpuOther),
            1 => (LaneId::gpu(format!("0:{i}")), TaskKind::GpuKernel),
            _ => (LaneId::comm(format!("c{i}")), TaskKind::Comm),
        })
        .collect();
    let mut tasks = Vec::with_capacity(n);
    let mut dur = Vec::with_capacity(n);
    let mut gap = Vec::with_capacity(n);
    let mut last_on: BTreeMap<usize, usize> = BTreeMap::new();
    let mut edges = Vec::new();
    let mut doc_edges = Vec::new();
    let mut lane_order: BTreeMap<LaneId, Vec<TaskId>> = BTreeMap::new();
    let density = rng.random_range(0.0..0.08);
    for i in 0..n {
        let l = rng.random_range(0..lanes.len());
        let (lane, kind) = &lanes[l];
        let d = if rng.random_bool(0.1) { 0 } else { rng.random_range(1..50_000) };
        let g = if kind.is_cpu() && rng.random_bool(0.5) { rng.random_range(0..5_000) } else { 0 };
        let mut t = Task::new(i as TaskId, *kind, format!("t{i}"), lane.clone(), d);
        t.gap = g;
        tasks.push(t);
        dur.push(d);
        gap.push(g);
        if let Some(&p) = last_on.get(&l) {
            edges.push((p, i));
            doc_edges.push(Edge {
                from: p as TaskId,
                to: i as TaskId,
                kind: EdgeKind::lane_seq(lane.class),
            });
        }
        last_on.insert(l, i);
        lane_order.entry(lane.clone()).or_default().push(i as TaskId);
        for j in 0..i {
            if rng.random_bool(density) && !edges.contains(&(j, i)) {
                edges.push((j, i));
                doc_edges.push(Edge {
                    from: j as TaskId,
                    to: i as TaskId,
                    kind: EdgeKind::Injected,
                });
            }
        }
    }
    let graph = DependencyGraph::from_document(GraphDocument {
        tasks,
        edges: doc_edges,
        lane_order,
    })
    .expect("well-formed document");
    ChainGraph { graph, edges, dur, gap }
}

/// Longest weighted path over a DAG given in topological index order:
/// node weight is the duration, leaving a node also costs its gap.
pub fn longest_path(n: usize, edges: &[(usize, usize)], dur: &[Nanos], gap: &[Nanos]) -> Nanos {
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        incoming[b].push(a);
    }
    let mut start = vec![0; n];
    let mut best = 0;
    for v in 0..n {
        start[v] = incoming[v].iter().map(|&u| start[u] + dur[u] + gap[u]).max().unwrap_or(0);
        best = best.max(start[v] + dur[v]);
    }
    best
}

/// Longest path of an arbitrary graph, via repeated relaxation in a
/// Kahn order computed here.
pub fn graph_longest_path(g: &DependencyGraph) -> Nanos {
    let ids: Vec<TaskId> = g.task_ids().collect();
    let ix: BTreeMap<TaskId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut indeg = vec![0usize; ids.len()];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    for e in g.edges() {
        out[ix[&e.from]].push(ix[&e.to]);
        indeg[ix[&e.to]] += 1;
    }
    let mut queue: Vec<usize> = (0..ids.len()).filter(|&i| indeg[i] == 0).collect();
    let mut start = vec![0; ids.len()];
    let mut best = 0;
    let mut seen = 0;
    while let Some(u) = queue.pop() {
        seen += 1;
        let t = g.task(ids[u]).unwrap();
        best = best.max(start[u] + t.duration);
        for &v in &out[u] {
            start[v] = start[v].max(start[u] + t.duration + t.gap);
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push(v);
            }
        }
    }
    assert_eq!(seen, ids.len(), "graph has a cycle");
    best
}

/// Every schedule property the simulator promises, as a list of
/// violations.
pub fn schedule_violations(g: &DependencyGraph, r: &SimulationResult) -> Vec<String> {
    let mut bad = Vec::new();
    if r.start_of.len() != g.len() {
        bad.push(format!("{} of {} tasks scheduled", r.start_of.len(), g.len()));
        return bad;
    }
    for e in g.edges() {
        let u = g.task(e.from).unwrap();
        if r.start_of[&e.to] < r.start_of[&e.from] + u.duration + u.gap {
            bad.push(format!("edge {e:?} not respected"));
        }
    }
    let mut per_lane: BTreeMap<&LaneId, Vec<(Nanos, Nanos)>> = BTreeMap::new();
    for t in g.tasks() {
        per_lane.entry(&t.lane).or_default().push((r.start_of[&t.id], t.duration));
    }
    let mut max_load = 0;
    for (lane, mut iv) in per_lane {
        iv.sort();
        for w in iv.windows(2) {
            if w[1].0 < w[0].0 + w[0].1 {
                bad.push(format!("overlap on {lane}: {w:?}"));
            }
        }
        max_load = max_load.max(iv.iter().map(|x| x.1).sum::<Nanos>());
    }
    let actual = g.tasks().map(|t| r.start_of[&t.id] + t.duration).max().unwrap_or(0);
    if actual != r.makespan {
        bad.push(format!("makespan {} but last end {actual}", r.makespan));
    }
    if r.makespan < max_load {
        bad.push(format!("makespan {} below lane load {max_load}", r.makespan));
    }
    let lp = graph_longest_path(g);
    if r.makespan < lp {
        bad.push(format!("makespan {} below longest path {lp}", r.makespan));
    }
    bad
}

/// Edge set implied by the five dependency rules, computed by brute force.
pub fn expected_edges(trace: &TraceDocument) -> BTreeSet<(u64, u64, EdgeKind)> {
    let ev = &trace.events;
    let mut out = BTreeSet::new();
    let lanes: BTreeSet<&LaneId> = ev.iter().map(|e| &e.lane).collect();
    let mut lane_list: BTreeMap<&LaneId, Vec<&TraceEvent>> = BTreeMap::new();
    for lane in &lanes {
        let mut on: Vec<&TraceEvent> = ev.iter().filter(|e| &&e.lane == lane).collect();
        on.sort_by_key(|e| (e.start, e.start + e.duration, e.id));
        let kind = match lane.class {
            LaneClass::CpuThread => EdgeKind::LaneSeqCpu,
            LaneClass::GpuStream => EdgeKind::LaneSeqGpu,
            LaneClass::CommChannel => EdgeKind::CommOrder,
        };
        for w in on.windows(2) {
            out.insert((w[0].id, w[1].id, kind));
        }
        lane_list.insert(lane, on);
    }
    let launcher = |e: &TraceEvent| -> Option<&TraceEvent> {
        let c = e.correlation?;
        ev.iter()
            .filter(|l| l.kind.is_cpu() && l.correlation == Some(c))
            .min_by_key(|l| (l.start, l.id))
    };
    for e in ev.iter().filter(|e| !e.kind.is_cpu()) {
        if let Some(l) = launcher(e) {
            out.insert((l.id, e.id, EdgeKind::LaunchCorrelation));
        }
    }
    let mut waits: Vec<(&TraceEvent, Vec<&LaneId>)> = Vec::new();
    for e in ev {
        if e.kind == TaskKind::Sync {
            let targets = match &e.sync_target {
                Some(t) => lanes.iter().copied().filter(|l| *l == t).collect(),
                None => lanes.iter().copied().filter(|l| l.class == LaneClass::GpuStream).collect(),
            };
            waits.push((e, targets));
        } else if e.kind == TaskKind::GpuMemcpy && e.name.starts_with("memcpy_dtoh") {
            if let Some(l) = launcher(e) {
                waits.push((l, vec![&e.lane]));
            }
        }
    }
    for (call, targets) in waits {
        for lane in targets {
            let on = &lane_list[lane];
            let awaited = on
                .iter()
                .enumerate()
                .filter(|(_, t)| {
                    let l = launcher(t).unwrap_or(t);
                    (l.start, l.id) < (call.start, call.id)
                })
                .max_by_key(|(i, _)| *i);
            if let Some((_, t)) = awaited {
                out.insert((t.id, call.id, EdgeKind::SyncBlock));
            }
        }
    }
    out
}

pub fn edge_set(g: &DependencyGraph) -> BTreeSet<(u64, u64, EdgeKind)> {
    g.edges().map(|e| (e.from, e.to, e.kind)).collect()
}

/// Smallest makespan over every order in which the list-scheduling loop
/// could pick ready tasks. Exponential; small graphs only.
pub fn brute_force_min_makespan(g: &DependencyGraph) -> Nanos {
    use std::collections::HashMap;
    let ids: Vec<TaskId> = g.task_ids().collect();
    assert!(ids.len() <= 64);
    let ix: BTreeMap<TaskId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let tasks: Vec<&Task> = ids.iter().map(|id| g.task(*id).unwrap()).collect();
    let lanes: Vec<&LaneId> = tasks.iter().map(|t| &t.lane).collect::<BTreeSet<_>>().into_iter().collect();
    let lane_of: Vec<usize> = tasks.iter().map(|t| lanes.iter().position(|l| *l == &t.lane).unwrap()).collect();
    let mut parents = vec![0u64; ids.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    for e in g.edges() {
        parents[ix[&e.to]] |= 1 << ix[&e.from];
        children[ix[&e.from]].push(ix[&e.to]);
    }

    struct Search<'a> {
        tasks: Vec<&'a Task>,
        lane_of: Vec<usize>,
        parents: Vec<u64>,
        children: Vec<Vec<usize>>,
        memo: HashMap<(u64, Vec<Nanos>, Vec<Nanos>), Nanos>,
    }
    impl Search<'_> {
        /// Least possible latest end among the tasks not yet in `done`.
        fn go(&mut self, done: u64, progress: &[Nanos], ready: &[Nanos]) -> Nanos {
            let n = self.tasks.len();
            if done.count_ones() as usize == n {
                return 0;
            }
            let key = (done, progress.to_vec(), ready.to_vec());
            if let Some(&v) = self.memo.get(&key) {
                return v;
            }
            let mut best = Nanos::MAX;
            for i in 0..n {
                if done & (1 << i) != 0 || self.parents[i] & !done != 0 {
                    continue;
                }
                let t = self.tasks[i];
                let start = progress[self.lane_of[i]].max(ready[i]);
                let end = start + t.duration;
                let mut p = progress.to_vec();
                p[self.lane_of[i]] = end + t.gap;
                let mut r = ready.to_vec();
                for c in self.children[i].clone() {
                    r[c] = r[c].max(end + t.gap);
                }
                best = best.min(end.max(self.go(done | (1 << i), &p, &r)));
            }
            self.memo.insert(key, best);
            best
        }
    }
    let mut s = Search {
        tasks,
        lane_of,
        parents,
        children,
        memo: HashMap::new(),
    };
    let n_lanes = lanes.len();
    s.go(0, &vec![0; n_lanes], &vec![0; ids.len()])
}
