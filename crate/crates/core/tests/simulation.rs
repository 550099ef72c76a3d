mod common;

use common::{schedule_violations, chain_graph, longest_path};
use kernelsim_core::graph::build_graph;
use kernelsim_core::sim::{simulate, simulate_with, EarliestStart, PolicySpec};
use kernelsim_core::synthetic::{generate, random_spec, RandomShape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chain_lanes_match_longest_path(seed in any::<u64>(), n in 0usize..=200) {
        let c = chain_graph(seed, n);
        let r = simulate(&c.graph, &mut EarliestStart).unwrap();
        prop_assert_eq!(r.makespan, longest_path(n, &c.edges, &c.dur, &c.gap));
    }

    #[test]
    fn chain_lanes_satisfy_schedule_rules(seed in any::<u64>(), n in 0usize..=200) {
        let c = chain_graph(seed, n);
        for policy in [PolicySpec::EarliestStart, PolicySpec::Priority] {
            let r = simulate_with(&c.graph, &policy).unwrap();
            prop_assert_eq!(schedule_violations(&c.graph, &r), Vec::<String>::new());
            prop_assert_eq!(&r, &simulate_with(&c.graph, &policy).unwrap());
        }
    }

    #[test]
    fn traces_satisfy_schedule_rules(seed in any::<u64>(), tasks in 1usize..600) {
        let shape = RandomShape::draw(tasks, &mut ChaCha8Rng::seed_from_u64(seed));
        let gen = generate(&random_spec(&shape, seed), seed).unwrap();
        let g = build_graph(&gen.trace).unwrap();
        let r = simulate(&g, &mut EarliestStart).unwrap();
        prop_assert_eq!(r.makespan, gen.makespan);
        prop_assert_eq!(schedule_violations(&g, &r), Vec::<String>::new());
        prop_assert_eq!(r, simulate(&g, &mut EarliestStart).unwrap());
    }
}

#[test]
fn generated_makespans_reproduce() {
    for seed in 0..40u64 {
        let tasks = 50 + (seed as usize * 97) % 2_000;
        let shape = RandomShape::draw(tasks, &mut ChaCha8Rng::seed_from_u64(seed));
        let gen = generate(&random_spec(&shape, seed), seed).unwrap();
        let r = simulate(&build_graph(&gen.trace).unwrap(), &mut EarliestStart).unwrap();
        assert_eq!(r.makespan, gen.makespan, "seed {seed}");
    }
}

#[test]
fn empty_graph() {
    let c = chain_graph(3, 0);
    let r = simulate(&c.graph, &mut EarliestStart).unwrap();
    assert_eq!(r.makespan, 0);
    assert!(r.start_of.is_empty());
}
