mod common;

use common::{edge_set, expected_edges};
use kernelsim_core::graph::{build_graph, build_graph_with, verify_acyclic, BuildOptions, EdgeKind};
use kernelsim_core::synthetic::{generate, random_spec, RandomShape, SyntheticSpec, SyntheticTask};
use kernelsim_core::trace::{LaneId, TaskKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn rule_audit_on_random_traces() {
    let mut device_wide = 0;
    let mut scoped = 0;
    let mut dtoh = 0;
    for seed in 0..100u64 {
        let mut shape = RandomShape::draw(40 + (seed as usize * 37) % 400, &mut ChaCha8Rng::seed_from_u64(seed));
        if seed % 3 == 0 {
            shape.cpu_lanes = 1;
        }
        shape.sync_prob = shape.sync_prob.max(0.05);
        let gen = generate(&random_spec(&shape, seed), seed).unwrap();
        let trace = &gen.trace;
        let g = build_graph(trace).unwrap();
        let want = expected_edges(trace);
        assert_eq!(edge_set(&g), want, "seed {seed}");
        assert_eq!(gen.edges, want, "generator disagrees, seed {seed}");
        for e in &trace.events {
            match (e.kind, &e.sync_target) {
                (TaskKind::Sync, None) => device_wide += 1,
                (TaskKind::Sync, Some(_)) => scoped += 1,
                (TaskKind::GpuMemcpy, _) if e.name.starts_with("memcpy_dtoh") => dtoh += 1,
                _ => {}
            }
        }
        let lane_seq: usize = g.lane_order().values().map(|o| o.len().saturating_sub(1)).sum();
        let counts = g.edge_counts_by_kind();
        let seq = [EdgeKind::LaneSeqCpu, EdgeKind::LaneSeqGpu, EdgeKind::CommOrder]
            .iter()
            .map(|k| counts.get(k).copied().unwrap_or(0))
            .sum::<usize>();
        assert_eq!(seq, lane_seq);
        assert_eq!(verify_acyclic(&g).unwrap().len(), g.len());
    }
    assert!(device_wide > 0 && scoped > 0 && dtoh > 0, "{device_wide} {scoped} {dtoh}");
}

fn launch(spec: &mut SyntheticSpec, stream: &str, corr: u64, name: &str) {
    spec.lane(LaneId::cpu("0"))
        .push(SyntheticTask::new("cudaLaunchKernel", TaskKind::CpuApi, 2.0).corr(corr));
    spec.lane(LaneId::gpu(stream))
        .push(SyntheticTask::new(name, TaskKind::GpuKernel, 10.0).corr(corr));
}

#[test]
fn sync_examples() {
    let mut spec = SyntheticSpec::default();
    spec.lane(LaneId::cpu("0")).push(SyntheticTask::new("early_sync", TaskKind::Sync, 1.0));
    launch(&mut spec, "0:1", 0, "k0");
    launch(&mut spec, "0:2", 1, "k1");
    spec.lane(LaneId::cpu("0")).push(SyntheticTask::new("cudaDeviceSynchronize", TaskKind::Sync, 1.0));
    spec.lane(LaneId::cpu("0")).push(
        SyntheticTask::new("cudaStreamSynchronize", TaskKind::Sync, 1.0).sync_on(LaneId::gpu("0:1")),
    );
    let trace = generate(&spec, 0).unwrap().trace;
    let g = build_graph(&trace).unwrap();
    let id = |name: &str| trace.events.iter().find(|e| e.name == name).unwrap().id;
    let sync_in = |name: &str| {
        let mut v: Vec<u64> =
            g.in_edges(id(name)).filter(|(_, k)| *k == EdgeKind::SyncBlock).map(|(f, _)| f).collect();
        v.sort();
        v
    };
    assert!(sync_in("early_sync").is_empty());
    assert_eq!(sync_in("cudaDeviceSynchronize"), vec![id("k0"), id("k1")]);
    assert_eq!(sync_in("cudaStreamSynchronize"), vec![id("k0")]);
}

#[test]
fn dtoh_copy_blocks_its_launcher() {
    let mut spec = SyntheticSpec::default();
    launch(&mut spec, "0:1", 0, "k0");
    spec.lane(LaneId::cpu("0"))
        .push(SyntheticTask::new("cudaMemcpyAsync", TaskKind::CpuApi, 1.0).corr(1));
    spec.lane(LaneId::gpu("0:1"))
        .push(SyntheticTask::new("memcpy_dtoh_async", TaskKind::GpuMemcpy, 4.0).corr(1));
    let gen = generate(&spec, 0).unwrap();
    let g = build_graph(&gen.trace).unwrap();
    // the copy's launcher waits for the kernel launched before it
    assert!(g.has_edge(2, 1, EdgeKind::SyncBlock));
    assert_eq!(edge_set(&g), expected_edges(&gen.trace));
}

#[test]
fn orphan_kernels() {
    let mut spec = SyntheticSpec::default();
    launch(&mut spec, "0:1", 0, "k0");
    let mut trace = generate(&spec, 0).unwrap().trace;
    trace.events[0].correlation = Some(99);
    let strict = build_graph_with(&trace, BuildOptions { strict: true }).unwrap_err();
    assert_eq!(strict.name(), "OrphanKernel");
    let (g, report) = build_graph_with(&trace, BuildOptions::default()).unwrap();
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(g.edge_count(), 0);
}
