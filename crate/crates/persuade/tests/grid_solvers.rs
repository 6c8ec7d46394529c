//! The exact program, its certificate and the saddle solver on random instances.

mod common;

use persuade::model::{build_indirect, occ_residuals, to_simple_recommendation, BeliefTimeDistribution};
use persuade::oracle::{solve_relaxed, solve_revelation_reduced, GridProblem};
use persuade::saddle::{pava, solve_saddle, verify_foc, SaddleConfig, SaddleStatus, Selection};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> GridProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GridProblem::with_lattice(common::action_form(&mut rng, 3, 3, 5), 45).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lp_solutions_are_feasible_and_certified(seed in any::<u64>()) {
        let gp = instance(seed);
        let sol = solve_relaxed(&gp).unwrap();
        sol.f.validate(&gp.prim.prior, 1e-9).unwrap();
        prop_assert!(occ_residuals(&sol.f, &gp.util).iter().all(|r| *r >= -1e-9));
        let foc = verify_foc(&gp, &sol.f, &sol.certificate(), Selection::Certificate, 1e-6);
        prop_assert!(foc.passed, "{:?}", foc);
    }

    #[test]
    fn commitment_beats_immediate_revelation(seed in any::<u64>()) {
        let gp = instance(seed);
        let sol = solve_relaxed(&gp).unwrap();
        let reveal = BeliefTimeDistribution::full_revelation(gp.prim.times.clone(), &gp.prim.prior, 0);
        prop_assert!(sol.objective >= reveal.expected_v(&gp.util) - 1e-9);
    }

    #[test]
    fn lp_solutions_become_simple_recommendations(seed in any::<u64>()) {
        let gp = instance(seed);
        let f = solve_relaxed(&gp).unwrap().f.merged(1e-12);
        let util = build_indirect(&gp.prim).unwrap();
        let rec = to_simple_recommendation(&f, &util).unwrap();
        prop_assert!(rec.martingale_gap(&gp.prim.prior) < 1e-9);
        prop_assert!(rec.survival.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn pava_is_monotone_and_mean_preserving(y in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        let z = pava(&y);
        prop_assert!(z.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        let (sy, sz): (f64, f64) = (y.iter().sum(), z.iter().sum());
        prop_assert!((sy - sz).abs() < 1e-9);
    }
}

#[test]
fn saddle_agrees_with_the_program() {
    for seed in 0..6 {
        let gp = instance(seed);
        let lp = solve_relaxed(&gp).unwrap();
        let sd = solve_saddle(&gp, &SaddleConfig::default()).unwrap();
        assert_eq!(sd.status, SaddleStatus::Converged, "seed {seed}");
        assert!((sd.value - lp.objective).abs() < 1e-4, "seed {seed}: {} vs {}", sd.value, lp.objective);
    }
}

#[test]
fn revelation_reduced_program_matches_when_it_applies() {
    use persuade::model::Primitives;
    use rand::Rng;

    for seed in 10..16 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=3);
        let prior = common::random_prior(&mut rng, n);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d = rng.gen_range(0.1..0.8);
        // The principal's payoff ignores the action, so V is linear in beliefs.
        let prim = Primitives::from_fn(
            n,
            n,
            common::even_times(4, 1.0),
            prior,
            |s, a, t| f64::from(s == a) - 0.3 * t,
            |s, _, t| w[s] + d * t,
        )
        .unwrap();
        let gp = GridProblem::with_lattice(prim, 45).unwrap();
        let full = solve_relaxed(&gp).unwrap().objective;
        let reduced = solve_revelation_reduced(&gp).unwrap().objective;
        assert!((full - reduced).abs() < 1e-7, "seed {seed}: {full} vs {reduced}");
    }
}

#[test]
fn revelation_reduced_program_refuses_nonconvex_payoffs() {
    let gp = instance(3);
    let sol = solve_revelation_reduced(&gp);
    let convex = gp.beliefs.iter().all(|mu| {
        (0..gp.n_times()).all(|k| {
            let i = gp.belief_index(mu).unwrap();
            let chord: f64 = mu.iter().enumerate().map(|(s, m)| {
                let v = gp.belief_index(&persuade::model::vertex(mu.len(), s)).unwrap();
                m * gp.v_tab[v][k]
            }).sum();
            gp.v_tab[i][k] <= chord + 1e-9
        })
    });
    assert_eq!(sol.is_ok(), convex);
}
