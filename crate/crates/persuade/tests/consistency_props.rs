//! Zero-surplus transformation and serialization round trips.

mod common;

use persuade::consistency::{interim_surplus, law_distance, make_zero_surplus, FiniteBeliefProcess};
use persuade::io::{distribution_from_records, distribution_records, to_json_string};
use persuade::model::{build_indirect, to_simple_recommendation};
use persuade::oracle::{solve_relaxed, GridProblem};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_surplus_keeps_the_outcome_law(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prim = common::delay_rewarding(&mut rng);
        let util = build_indirect(&prim).unwrap();
        let f = solve_relaxed(&GridProblem::with_lattice(prim.clone(), 45).unwrap()).unwrap().f.merged(1e-12);
        let rec = to_simple_recommendation(&f, &util).unwrap();
        let proc = FiniteBeliefProcess::from_recommendation(&rec, &prim.prior);
        let (z, _) = make_zero_surplus(&proc, &util, 1e-12).unwrap();
        z.validate(1e-9).unwrap();
        prop_assert!(law_distance(&z.outcome_law(), &f) < 1e-9);
        prop_assert!(interim_surplus(&z, &util, 1e-9).zero_surplus);
        prop_assert!((z.outcome_law().expected_v(&util) - f.expected_v(&util)).abs() < 1e-9);
    }

    #[test]
    fn distributions_survive_a_json_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prim = common::action_form(&mut rng, 3, 3, 5);
        let f = solve_relaxed(&GridProblem::with_lattice(prim.clone(), 45).unwrap()).unwrap().f;
        let text = to_json_string(&distribution_records(&f));
        let records: Vec<persuade::io::AtomRecord> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(distribution_from_records(&prim.times, &records).unwrap(), f);
    }

    #[test]
    fn reordering_nodes_changes_nothing(seed in any::<u64>(), rot in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prim = common::delay_rewarding(&mut rng);
        let util = build_indirect(&prim).unwrap();
        let f = solve_relaxed(&GridProblem::with_lattice(prim.clone(), 45).unwrap()).unwrap().f.merged(1e-12);
        let proc = FiniteBeliefProcess::from_recommendation(&to_simple_recommendation(&f, &util).unwrap(), &prim.prior);
        let n = proc.nodes.len();
        let map: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let mut shuffled = proc.clone();
        for (i, node) in proc.nodes.iter().enumerate() {
            let mut node = node.clone();
            node.children.iter_mut().for_each(|c| c.0 = map[c.0]);
            shuffled.nodes[map[i]] = node;
        }
        shuffled.root.iter_mut().for_each(|c| c.0 = map[c.0]);
        prop_assert!(law_distance(&shuffled.outcome_law(), &proc.outcome_law()) < 1e-12);
        let a = interim_surplus(&proc, &util, 1e-9);
        let b = interim_surplus(&shuffled, &util, 1e-9);
        prop_assert!((a.max_surplus - b.max_surplus).abs() < 1e-12);
    }
}
