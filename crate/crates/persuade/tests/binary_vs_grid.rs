//! Closed-form two-state strategies against the grid program.

use persuade::binary::{select_strategy, BinaryPersuasionSpec, DelayGain};
use persuade::oracle::{solve_relaxed, GridProblem};
use proptest::prelude::*;

fn grid_value(spec: &BinaryPersuasionSpec, dt: f64) -> f64 {
    let k = (spec.horizon() / dt).ceil() as usize;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 * dt).collect();
    let gp = GridProblem::with_lattice(spec.to_primitives(times).unwrap(), 101).unwrap();
    solve_relaxed(&gp).unwrap().objective
}

#[test]
fn closed_forms_bound_and_approach_the_grid_value() {
    let specs = [
        (0.4, 0.546, DelayGain::Log { scale: 0.5 }, DelayGain::Log { scale: 1.0 }),
        (0.3, 0.4, DelayGain::Log { scale: 1.0 }, DelayGain::Log { scale: 1.0 }),
        (0.25, 0.2, DelayGain::Linear { slope: 0.1 }, DelayGain::Log { scale: 0.5 }),
    ];
    for (mu0, dv, h_ell, h_r) in specs {
        let spec = BinaryPersuasionSpec::new(mu0, 0.0, dv, h_ell, h_r).unwrap();
        let closed = select_strategy(&spec).unwrap().payoff;
        let coarse = grid_value(&spec, 0.1);
        let fine = grid_value(&spec, 0.025);
        assert!(coarse <= fine + 1e-9, "{spec:?}");
        assert!(fine <= closed + 1e-6, "{spec:?}: grid {fine} above closed form {closed}");
        assert!((closed - fine) / closed < 0.02, "{spec:?}: {closed} vs {fine}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn strategies_are_proper_stopping_laws(
        mu0 in 0.05f64..0.45,
        dv in 0.05f64..1.5,
        a in 0.2f64..1.5,
        b in 0.2f64..1.5,
    ) {
        let spec = BinaryPersuasionSpec::new(mu0, 0.0, dv, DelayGain::Log { scale: a }, DelayGain::Log { scale: b }).unwrap();
        let Ok(choice) = select_strategy(&spec) else { return Ok(()) };
        let s = &choice.strategy;
        prop_assert!(0.0 <= s.t1 && s.t1 <= s.t2 + 1e-12);
        let mut last = 1.0;
        for k in 0..=40 {
            let t = s.t2 * 1.1 * k as f64 / 40.0;
            let surv = s.survival(t);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&surv));
            prop_assert!(surv <= last + 1e-9);
            last = surv;
        }
        prop_assert!(s.survival(s.t2 * 1.01 + 1e-9) < 1e-9);
        // The agent is never worse off than acting on the prior at once.
        prop_assert!(s.agent_value() >= (1.0 - mu0).max(mu0) - 1e-9);
    }
}
