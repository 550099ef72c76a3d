//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Oracles are shared with the core property tests.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::identity::*;
use common::{schedule_violations, brute_force_min_makespan, chain_graph, edge_set, expected_edges, longest_path};
use kernelsim_cli::{cmd_gen, cmd_simulate, sweep_workload, write, GenSource};
use kernelsim_core::breakdown::compute_breakdown;
use kernelsim_core::comm::NetworkConfig;
use kernelsim_core::fixtures::{self, LayerSpec, ModelSpec};
use kernelsim_core::graph::{build_graph, verify_acyclic, DependencyGraph};
use kernelsim_core::scenarios::{blueconnect_stages, ScenarioSpec};
use kernelsim_core::sim::{simulate, simulate_with, EarliestStart, PolicySpec, PriorityFirst, SimulationResult};
use kernelsim_core::synthetic::{generate, generate_synthetic_trace, random_spec, RandomShape, SyntheticSpec};
use kernelsim_core::time::{Nanos, Ratio};
use kernelsim_core::trace::{TaskKind, TraceDocument};
use kernelsim_core::transform::{apply_pipeline, apply_pipeline_traced, NewTask, Selector, Step, TransformPipeline};
use kernelsim_core::{WhatIfReport, Workload};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn workload(spec: &SyntheticSpec) -> Workload {
    Workload::from_trace(generate_synthetic_trace(spec, 0).unwrap().0, Default::default()).unwrap()
}

fn random_trace(seed: u64, tasks: usize) -> TraceDocument {
    let shape = RandomShape::draw(tasks, &mut ChaCha8Rng::seed_from_u64(seed));
    generate_synthetic_trace(&random_spec(&shape, seed), seed).unwrap().0
}

fn conforms(g: &DependencyGraph, r: &SimulationResult) -> Result<(), String> {
    let v = schedule_violations(g, r);
    ensure!(v.is_empty(), "{} violations, first: {}", v.len(), v[0]);
    Ok(())
}

fn baseline_fidelity() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let start = Instant::now();
    let (mut traces, mut largest, mut comm) = (0, 0, 0);
    for i in 0..200u64 {
        let tasks = 25 * (i as usize + 1);
        let g = cmd_gen(&GenSource::Random(tasks), 1000 + i).map_err(|e| e.to_string())?;
        let path = dir.path().join("trace.json");
        write(&path, &g.trace.to_json()).unwrap();
        let sim = cmd_simulate(&path, true).map_err(|e| e.to_string())?;
        ensure!(sim.makespan == g.expected_makespan, "trace {i}: simulated {} != generated {}", sim.makespan, g.expected_makespan);
        traces += 1;
        largest = largest.max(g.trace.events.len());
        comm += g.trace.events.iter().any(|e| e.kind == TaskKind::Comm) as usize;
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    ensure!(largest >= 4500 && comm > 0, "corpus too narrow: largest {largest}, {comm} with comm");
    Ok(format!("{traces} traces up to {largest} tasks ({comm} with comm lanes) in {:.1}s", took.as_secs_f64()))
}

fn longest_path_oracle() -> Outcome {
    let mut n_total = 0;
    for seed in 0..500u64 {
        let n = (seed as usize * 7) % 201;
        let c = chain_graph(seed, n);
        let r = simulate(&c.graph, &mut EarliestStart).unwrap();
        let want = longest_path(n, &c.edges, &c.dur, &c.gap);
        ensure!(r.makespan == want, "seed {seed}: {} != {want}", r.makespan);
        n_total += n;
    }
    Ok(format!("500 chain-lane graphs, {n_total} tasks"))
}

fn conformance() -> Outcome {
    let mut runs = 0;
    let mut check = |g: &DependencyGraph, policy: &PolicySpec| -> Result<(), String> {
        let a = simulate_with(g, policy).unwrap();
        conforms(g, &a)?;
        ensure!(simulate_with(g, policy).unwrap() == a, "nondeterministic under {policy:?}");
        runs += 1;
        Ok(())
    };
    for seed in 0..300u64 {
        let c = chain_graph(seed, (seed as usize * 13) % 201);
        check(&c.graph, &PolicySpec::EarliestStart)?;
        check(&c.graph, &PolicySpec::Priority)?;
        check(&build_graph(&random_trace(seed, (seed as usize * 17) % 600)).unwrap(), &PolicySpec::EarliestStart)?;
    }
    let w = workload(&fixtures::model(&fixtures::convnet()));
    for spec in all_scenarios() {
        let r = w.whatif(&spec).unwrap();
        conforms(&r.graph, &r.result)?;
        ensure!(w.whatif(&spec).unwrap().result == r.result, "{} nondeterministic", spec.scenario);
        runs += 1;
    }
    let mut pf = PriorityFirst;
    let g = build_graph(&random_trace(7, 300)).unwrap();
    conforms(&g, &simulate(&g, &mut pf).unwrap())?;
    Ok(format!("{runs} simulations, 0 violations"))
}

fn all_scenarios() -> Vec<ScenarioSpec> {
    let dist = || ScenarioSpec::new("distributed");
    vec![
        ScenarioSpec::new("amp"),
        ScenarioSpec::new("fused_adam"),
        ScenarioSpec::new("reconstruct_batchnorm"),
        dist(),
        ScenarioSpec::new("p3"),
        ScenarioSpec::new("blueconnect").on_top_of(dist()),
        ScenarioSpec::new("metaflow").param("remove_layers", vec!["relu1"]),
        ScenarioSpec::new("vdnn"),
        ScenarioSpec::new("gist").param("lossy", true),
        ScenarioSpec::new("dgc").on_top_of(dist()),
    ]
}

fn rule_audit() -> Outcome {
    let (mut device_wide, mut scoped, mut dtoh, mut edges) = (0, 0, 0, 0);
    for seed in 0..100u64 {
        let mut shape = RandomShape::draw(40 + (seed as usize * 37) % 400, &mut ChaCha8Rng::seed_from_u64(seed));
        if seed % 3 == 0 {
            shape.cpu_lanes = 1;
        }
        shape.sync_prob = shape.sync_prob.max(0.05);
        let trace = generate(&random_spec(&shape, seed), seed).unwrap().trace;
        let got = edge_set(&build_graph(&trace).unwrap());
        let want = expected_edges(&trace);
        ensure!(got == want, "seed {seed}: {} extra, {} missing", got.difference(&want).count(), want.difference(&got).count());
        edges += got.len();
        for e in &trace.events {
            match (e.kind, &e.sync_target) {
                (TaskKind::Sync, None) => device_wide += 1,
                (TaskKind::Sync, Some(_)) => scoped += 1,
                (TaskKind::GpuMemcpy, _) if e.name.starts_with("memcpy_dtoh") => dtoh += 1,
                _ => {}
            }
        }
    }
    ensure!(device_wide > 0 && scoped > 0 && dtoh > 0, "corpus lacks syncs or DtoH: {device_wide} {scoped} {dtoh}");
    Ok(format!("100 traces, {edges} edges, {device_wide} device-wide / {scoped} stream syncs, {dtoh} blocking DtoH"))
}

fn amp_analytic() -> Outcome {
    let w = workload(&fixtures::amp_gpu_bound(0.0));
    let r = w.whatif(&ScenarioSpec::new("amp")).unwrap();
    // 6 * (sum sgemm/3 + sum other/2), exact
    let (mut six_x, mut kernels) = (0u128, 0u128);
    for e in w.trace.events.iter().filter(|e| e.kind == TaskKind::GpuKernel) {
        let d = e.duration as u128;
        six_x += if e.name.contains("sgemm") || e.name.contains("scudnn") { 2 * d } else { 3 * d };
        kernels += 1;
    }
    let err6 = (6 * r.predicted_makespan as u128).abs_diff(six_x);
    ensure!(err6 <= 6 * kernels, "predicted {} vs {:.3} ns", r.predicted_makespan, six_x as f64 / 6.0);
    let cpu = workload(&fixtures::amp_cpu_bound()).whatif(&ScenarioSpec::new("amp")).unwrap();
    ensure!(cpu.speedup <= 0.01, "CPU-bound speedup {:.4}", cpu.speedup);
    Ok(format!(
        "GPU-bound {} ns vs analytic {:.3} ns; CPU-bound speedup {:.3}%",
        r.predicted_makespan,
        six_x as f64 / 6.0,
        100.0 * cpu.speedup
    ))
}

fn dist_model() -> ModelSpec {
    ModelSpec {
        layers: vec![
            LayerSpec::new("conv1", "scudnn_conv", 40.0, 80.0, 3_000_000),
            LayerSpec::new("conv2", "scudnn_conv", 50.0, 90.0, 1_000_000),
            LayerSpec::new("fc", "sgemm", 30.0, 60.0, 5_000_000),
        ],
        launch_us: 3.0,
        wu_kernels: 2,
        wu_us: 4.0,
        next_forward: false,
        layers_per_bucket: 1,
    }
}

/// `2(n-1)/n * 8S / B` in ns, rounded half-up.
fn ring_ns(size: u64, n: u128, gbps: u128) -> Nanos {
    let (num, den) = (2 * (n - 1) * 8 * size as u128 * 1_000_000_000, n * gbps * 1_000_000_000);
    ((2 * num + den) / (2 * den)) as Nanos
}

fn comm_durations(r: &WhatIfReport) -> Vec<Nanos> {
    r.graph.tasks().filter(|t| t.is_comm()).map(|t| t.duration).collect()
}

fn bandwidth_law() -> Outcome {
    let w = workload(&fixtures::model(&dist_model()));
    let spec = ScenarioSpec::new("distributed").param("workers", 4);
    let sweep = sweep_workload(&w, &spec, "bandwidth_gbps", &[json!(10), json!(20), json!(40)]).map_err(|e| e.to_string())?;
    let m: Vec<Nanos> = sweep.points.iter().map(|p| p.makespan).collect();
    ensure!(m.windows(2).all(|p| p[1] <= p[0]), "makespans not non-increasing: {m:?}");
    let mut sizes: Vec<u64> = w.trace.gradient_buckets.as_ref().unwrap().bucket_size_bytes.values().copied().collect();
    sizes.sort_unstable();
    let mut first: Vec<Nanos> = Vec::new();
    for (i, bw) in [10u64, 20, 40].into_iter().enumerate() {
        let r = w.whatif(&spec.clone().param("bandwidth_gbps", bw)).unwrap();
        ensure!(r.predicted_makespan == m[i], "sweep and whatif disagree at {bw} Gbps");
        let mut d = comm_durations(&r);
        d.sort_unstable();
        let want: Vec<Nanos> = sizes.iter().map(|&s| ring_ns(s, 4, bw as u128)).collect();
        ensure!(d == want, "{bw} Gbps: {d:?} != {want:?}");
        if i == 0 {
            first = d.clone();
        }
        let scaled: Vec<Nanos> = first.iter().map(|x| x >> i).collect();
        ensure!(d == scaled && first.iter().all(|x| x % (1 << i) == 0), "{bw} Gbps not 1/{} of 10 Gbps", 1 << i);
    }
    let one = w.whatif(&ScenarioSpec::new("distributed").param("workers", 1)).unwrap();
    ensure!(one.predicted_makespan == one.baseline_makespan, "n=1 changed makespan");
    Ok(format!("makespans {m:?} ns at 10/20/40 Gbps, comm ∝ 1/B exactly, n=1 identity"))
}

fn fused_adam_analytic() -> Outcome {
    let w = workload(&fixtures::fused_adam(100, 5.0, 1.0, 200.0));
    let r = w.whatif(&ScenarioSpec::new("fused_adam")).unwrap();
    let saved = r.baseline_makespan - r.predicted_makespan;
    ensure!(saved == 495_000, "saved {saved} ns");
    Ok(format!("{} -> {} ns, saved {saved} ns", r.baseline_makespan, r.predicted_makespan))
}

fn p3_oracle() -> Outcome {
    let w = workload(&fixtures::p3_two_layer());
    let spec = ScenarioSpec::new("p3").param("slice_size_bytes", 4_000_000).param("bandwidth_gbps", 10);
    let r = w.whatif(&spec).unwrap();
    let fifo = simulate_with(&r.graph, &PolicySpec::EarliestStart).unwrap().makespan;
    let best = brute_force_min_makespan(&r.graph);
    ensure!(r.predicted_makespan == best, "priority {} != optimum {best}", r.predicted_makespan);
    ensure!(r.predicted_makespan < fifo, "priority {} not below FIFO {fifo}", r.predicted_makespan);
    Ok(format!("priority {} ns = brute-force optimum, FIFO {fifo} ns", r.predicted_makespan))
}

fn makespan(g: &DependencyGraph) -> Result<Nanos, String> {
    let r = simulate(g, &mut EarliestStart).unwrap();
    conforms(g, &r)?;
    Ok(r.makespan)
}

fn primitive_identities() -> Outcome {
    let mut checks = 0;
    for seed in 0..150u64 {
        let g = random_graph(seed, 1 + (seed as usize * 11) % 300);
        let base = makespan(&g)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = pick(&g, &mut rng);
        let x = pick(&g, &mut rng);
        let cases: [(&str, Vec<Step>); 4] = [
            ("scale x1", vec![Step::scale(Selector::All, Ratio::ONE)]),
            ("insert zero", vec![insert(zero_task_on(&g, u), vec![u], vec![], true)]),
            (
                "remove-reinsert",
                vec![
                    Step::remove(Selector::Ids(vec![x])),
                    insert(NewTask::like(g.task(x).unwrap()), g.parents(x), g.children(x), true),
                ],
            ),
            ("empty", vec![]),
        ];
        for (name, steps) in cases {
            let mut p = TransformPipeline::new();
            for s in steps {
                p.push(s);
            }
            let stages = apply_pipeline_traced(&g, &p).map_err(|e| format!("{name}: {e}"))?;
            ensure!(stages.iter().all(|s| verify_acyclic(s).is_ok()), "{name} seed {seed}: cycle");
            let out = apply_pipeline(&g, &p).unwrap();
            ensure!(makespan(&out)? == base, "{name} seed {seed}: makespan moved");
            checks += 1;
        }
        // random inserts either keep the graph acyclic or are refused
        let a = pick(&g, &mut rng);
        let b = pick(&g, &mut rng);
        let mut t = zero_task_on(&g, a);
        t.duration_ns = rng.random_range(0..10_000);
        let mut p = TransformPipeline::new();
        p.push(insert(t, vec![a], vec![b], rng.random_bool(0.5)));
        if let Ok(stages) = apply_pipeline_traced(&g, &p) {
            ensure!(stages.iter().all(|s| verify_acyclic(s).is_ok()), "random insert seed {seed}: cycle");
        }
    }
    for seed in 0..60u64 {
        let m = random_model(seed);
        let w = workload(&fixtures::model(&m));
        let base = makespan(&w.graph)?;
        for name in DEGENERATE {
            match w.whatif(&degenerate(name)) {
                Ok(r) => {
                    ensure!(verify_acyclic(&r.graph).is_ok(), "{name} seed {seed}: cycle");
                    ensure!(r.predicted_makespan == base, "{name} seed {seed}: {} != {base}", r.predicted_makespan);
                    checks += 1;
                }
                Err(e) => ensure!(e.is_precondition(), "{name} seed {seed}: {e}"),
            }
        }
        let mut single = m.clone();
        single.wu_kernels = 1;
        let r = workload(&fixtures::model(&single)).whatif(&ScenarioSpec::new("fused_adam")).unwrap();
        ensure!(r.predicted_makespan == r.baseline_makespan, "fused_adam single kernel seed {seed}");
        if w.trace.gradient_buckets.is_some() {
            let (dgc, dist) = dgc_over_distributed();
            let want = w.whatif(&dist).unwrap().predicted_makespan;
            ensure!(w.whatif(&dgc).unwrap().predicted_makespan == want, "dgc seed {seed}");
            checks += 1;
        }
        checks += 1;
    }
    Ok(format!("{checks} identity checks, all acyclic"))
}

fn breakdown_conservation() -> Outcome {
    let mut results = 0;
    for seed in 0..150u64 {
        let g = build_graph(&random_trace(seed, (seed as usize * 19) % 500)).unwrap();
        let r = simulate(&g, &mut EarliestStart).unwrap();
        let b = compute_breakdown(&r, &g);
        ensure!(b.cpu_only + b.gpu_only + b.parallel + b.idle == r.makespan, "seed {seed}: {b:?}");
        results += 1;
    }
    let w = workload(&fixtures::model(&fixtures::convnet()));
    for spec in all_scenarios() {
        let r = w.whatif(&spec).unwrap();
        for b in [&r.baseline_breakdown, &r.breakdown] {
            ensure!(b.cpu_only + b.gpu_only + b.parallel + b.idle == b.total, "{}: {b:?}", spec.scenario);
        }
        ensure!(r.breakdown.total == r.predicted_makespan, "{}: total", spec.scenario);
        results += 1;
    }
    let amp = workload(&fixtures::amp_gpu_bound(5.0)).whatif(&ScenarioSpec::new("amp")).unwrap();
    let (before, after) = (&amp.baseline_breakdown, &amp.breakdown);
    ensure!(after.gpu_only < before.gpu_only, "gpu_only {} -> {}", before.gpu_only, after.gpu_only);
    ensure!(after.cpu_only == before.cpu_only, "cpu_only {} -> {}", before.cpu_only, after.cpu_only);
    Ok(format!(
        "{results} results conserved; AMP gpu_only {} -> {} ns, cpu_only {} ns unchanged",
        before.gpu_only, after.gpu_only, after.cpu_only
    ))
}

fn blueconnect_identity() -> Outcome {
    let mut cases = 0;
    for n in 2u32..=16 {
        for size in [1u64, 999_983, 4_000_000, 123_456_789] {
            for gbps in [1u64, 10, 25, 100] {
                let cfg = NetworkConfig::new(n, gbps);
                let stages = blueconnect_stages(size, &[n], &cfg).map_err(|e| e.to_string())?;
                ensure!(stages.len() == 2, "[{n}] gave {} stages", stages.len());
                let sum = stages[0] + stages[1];
                // 2(n-1)/n * 8S / B seconds, in ns
                let (num, den) = (2 * (n as u128 - 1) * 8 * size as u128 * 1_000_000_000, n as u128 * gbps as u128 * 1_000_000_000);
                ensure!(sum.numer() * den == num * sum.denom(), "n={n} S={size} B={gbps}: {sum} != {num}/{den}");
                cases += 1;
            }
        }
    }
    let w = workload(&fixtures::model(&dist_model()));
    for n in [2u32, 4, 8] {
        let dist = ScenarioSpec::new("distributed").param("workers", n);
        let ar: Nanos = comm_durations(&w.whatif(&dist).unwrap()).iter().sum();
        let bc = ScenarioSpec::new("blueconnect")
            .param("factorization", vec![n])
            .param("workers", n)
            .param("channels", 1)
            .on_top_of(dist);
        let r = w.whatif(&bc).unwrap();
        let d = comm_durations(&r);
        let total: Nanos = d.iter().sum();
        ensure!(total.abs_diff(ar) <= d.len() as Nanos, "graph level n={n}: {total} vs {ar}");
    }
    Ok(format!("{cases} exact rational identities; graph totals within per-stage rounding"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("baseline fidelity", baseline_fidelity),
        ("longest-path oracle", longest_path_oracle),
        ("list-scheduling conformance", conformance),
        ("dependency-rule audit", rule_audit),
        ("AMP analytic", amp_analytic),
        ("distributed bandwidth law", bandwidth_law),
        ("FusedAdam analytic", fused_adam_analytic),
        ("P3 oracle", p3_oracle),
        ("primitive identities", primitive_identities),
        ("breakdown conservation", breakdown_conservation),
        ("BlueConnect identity", blueconnect_identity),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
