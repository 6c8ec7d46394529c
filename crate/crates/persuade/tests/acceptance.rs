//! Acceptance suite: one verdict line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p persuade --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use persuade::binary::{psi, select_strategy, BinaryPersuasionSpec, DelayGain, SelectionCase, Side, Variant};
use persuade::censorship::{
    build_policy, discretize_for_oracle, policy_payoff, verify_identities, CensorshipProblem, Prior,
};
use persuade::consistency::{
    coase_demo, goalposts_strategies, interim_surplus, law_distance, make_zero_surplus, verify_dc1, CoaseSpec,
    Dc1Verdict, FiniteBeliefProcess, GoalpostsSpec,
};
use persuade::model::{build_indirect, occ_residuals, to_simple_recommendation, Primitives};
use persuade::oracle::{solve_relaxed, GridProblem};
use persuade::saddle::{solve_saddle, time_risk_diagnostics, verify_foc, SaddleConfig, Selection};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Collects the clauses of one criterion.
#[derive(Default)]
struct Report {
    lines: Vec<String>,
    failed: Vec<String>,
}

impl Report {
    fn clause(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        self.lines.push(format!("    [{}] {what}", if ok { "ok" } else { "FAILED" }));
        if !ok {
            self.failed.push(what);
        }
    }

    fn within(&mut self, elapsed: Duration, budget_s: f64, what: &str) {
        let s = elapsed.as_secs_f64();
        self.clause(s <= budget_s, format!("{what} runtime {s:.2} s <= {budget_s} s"));
    }
}

/// Upper concave envelope of `(x, y)` points evaluated at `x0`, by brute force over pairs.
fn concave_envelope(points: &[(f64, f64)], x0: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &(xi, yi) in points {
        for &(xj, yj) in points {
            if xi <= x0 && x0 <= xj {
                let y = if xj - xi < 1e-15 { yi.max(yj) } else { yi + (yj - yi) * (x0 - xi) / (xj - xi) };
                best = best.max(y);
            }
        }
    }
    best
}

fn static_value(prim: &Primitives) -> f64 {
    let gp = GridProblem::with_lattice(prim.clone(), 101).unwrap();
    let pts: Vec<(f64, f64)> = gp.beliefs.iter().map(|b| (b[1], gp.util.eval_v(b, 0))).collect();
    concave_envelope(&pts, prim.prior[1])
}

fn criterion_1(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_gap, mut worst_foc, mut slowest) = (0.0f64, 0.0f64, Duration::ZERO);
    let mut all_pass = true;
    for _ in 0..24 {
        let prim = common::action_form(&mut rng, 3, 3, 10);
        let start = Instant::now();
        let gp = GridProblem::with_lattice(prim, 101).unwrap();
        assert!(gp.n_beliefs() <= 101 + gp.prim.states.len() + 1);
        let lp = solve_relaxed(&gp).unwrap();
        let sd = solve_saddle(&gp, &SaddleConfig::default()).unwrap();
        let foc = verify_foc(&gp, &lp.f, &lp.certificate(), Selection::Certificate, 1e-6);
        slowest = slowest.max(start.elapsed());
        worst_gap = worst_gap.max((sd.value - lp.objective).abs());
        worst_foc = worst_foc.max(foc.max_violation);
        all_pass &= foc.passed;
    }
    r.clause(worst_gap <= 1e-4, format!("24 instances: max |saddle - LP| = {worst_gap:.2e} <= 1e-4"));
    r.clause(all_pass, format!("verify_foc with LP duals passes at 1e-6 (max violation {worst_foc:.2e})"));
    r.within(slowest, 5.0, "slowest instance");
}

fn criterion_2(r: &mut Report) {
    // Binary match model: waiting is ruinous, so only time 0 matters.
    let times = vec![0.0, 1.0];
    let matching = Primitives::from_fn(
        2,
        2,
        times.clone(),
        vec![0.7, 0.3],
        |s, a, t| f64::from(s == a) - 100.0 * t,
        |_, a, _| f64::from(a == 1),
    )
    .unwrap();
    let lp = solve_relaxed(&GridProblem::with_lattice(matching.clone(), 101).unwrap()).unwrap();
    r.clause((lp.objective - 0.6).abs() <= 1e-9, format!("match model value {:.12} = 0.6", lp.objective));
    r.clause((static_value(&matching) - 0.6).abs() <= 1e-9, "hand envelope of the match model is 0.6");

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_single = 0.0f64;
    let mut worst_impatient = 0.0f64;
    let mut only_time_zero = true;
    for _ in 0..8 {
        let base = common::action_form(&mut rng, 2, 3, 2);
        let na = base.actions.len();
        let single = Primitives::from_fn(2, na, times.clone(), base.prior.clone(), |s, a, t| {
            base.u[s][a][0] - 100.0 * t
        }, |s, a, _| base.v[s][a][0])
        .unwrap();
        let v = solve_relaxed(&GridProblem::with_lattice(single.clone(), 101).unwrap()).unwrap().objective;
        worst_single = worst_single.max((v - static_value(&single)).abs());

        // Patient agent, principal discounting at rate 1.
        let impatient = Primitives::from_fn(
            2,
            na,
            common::even_times(6, 1.0),
            base.prior.clone(),
            |s, a, _| base.u[s][a][0],
            |s, a, t| (-t).exp() * (1.0 + base.v[s][a][0]),
        )
        .unwrap();
        let sol = solve_relaxed(&GridProblem::with_lattice(impatient.clone(), 101).unwrap()).unwrap();
        worst_impatient = worst_impatient.max((sol.objective - static_value(&impatient)).abs());
        only_time_zero &= sol.f.support_times(1e-12) == [0];
    }
    r.clause(worst_single <= 1e-9, format!("8 single-time instances match the envelope (max gap {worst_single:.2e})"));
    r.clause(
        worst_impatient <= 1e-9,
        format!("8 impatient-principal instances equal the time-0 envelope (max gap {worst_impatient:.2e})"),
    );
    r.clause(only_time_zero, "impatient-principal solutions release information only at time 0");
}

fn criterion_3(r: &mut Report) {
    let start = Instant::now();
    let spec =
        BinaryPersuasionSpec::new(0.4, 0.0, 0.546, DelayGain::Log { scale: 0.5 }, DelayGain::Log { scale: 1.0 }).unwrap();
    let choice = select_strategy(&spec).unwrap();
    let s = &choice.strategy;
    r.clause(
        choice.case == SelectionCase::Interior && s.variant == Variant::SuspenseEll,
        format!("dv = 0.546 selects the interior t2 branch with Suspense-l ({:?}, {:?})", choice.case, s.variant),
    );
    r.clause(choice.certified, "strategy is certified");
    let res = &choice.residuals;
    let res_b_violation = if s.t1 > 0.0 { res.res_b.abs() } else { (-res.res_b).max(0.0) };
    let soc = res.soc_local.0.max(res.soc_local.1).max(0.0);
    r.clause(
        res.res_a.abs() <= 1e-8 && res_b_violation <= 1e-8 && soc <= 1e-8,
        format!("(a) {:.1e}, (b) violation {res_b_violation:.1e}, (c) violation {soc:.1e} all <= 1e-8", res.res_a.abs()),
    );

    let k = (spec.horizon() / 0.01).ceil() as usize;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 * 0.01).collect();
    let gp = GridProblem::with_lattice(spec.to_primitives(times).unwrap(), 101).unwrap();
    let lp = solve_relaxed(&gp).unwrap();
    let rel = (choice.payoff - lp.objective) / lp.objective;
    r.clause(
        rel.abs() <= 0.01,
        format!("closed form {:.6} vs LP {:.6} at dt = 0.01: {:+.3}%", choice.payoff, lp.objective, 100.0 * rel),
    );

    let id = DelayGain::Linear { slope: 1.0 };
    let lin = BinaryPersuasionSpec::new(0.4, 0.0, 1.0, id.clone(), id).unwrap();
    let mut worst = 0.0f64;
    for i in 0..=20 {
        for j in i..=20 {
            let (t, t2) = (0.1 * i as f64, 0.1 * j as f64);
            worst = worst.max((psi(&lin, Side::Ell, t, t2) - 1.0).abs());
        }
    }
    r.clause(worst <= 1e-10, format!("Psi = 1 for linear equal gains (max error {worst:.1e})"));
    r.within(start.elapsed(), 30.0, "criterion");
}

fn criterion_4(r: &mut Report) {
    let binaryish = |n: usize, prior: Vec<f64>, c: f64, v: &dyn Fn(usize, f64) -> f64| {
        Primitives::from_fn(n, n, common::even_times(9, 1.0), prior, |s, a, t| f64::from(s == a) - c * t, |_, a, t| v(a, t))
            .unwrap()
    };
    let convex = binaryish(2, vec![0.6, 0.4], 0.8, &|a, t| if a == 1 { 0.6 + 1.5 * t * t } else { t * t });
    let gp = GridProblem::with_lattice(convex, 101).unwrap();
    let sol = solve_relaxed(&gp).unwrap();
    let t_bar = *sol.f.support_times(1e-12).last().unwrap();
    let occ = occ_residuals(&sol.f, &gp.util);
    let worst = occ.iter().take(t_bar.min(occ.len())).fold(0.0f64, |m, x| m.max(x.abs()));
    r.clause(
        t_bar > 1 && worst <= 1e-6,
        format!("convex-in-time instance: obedience binds at all {t_bar} times before t_bar (max residual {worst:.1e})"),
    );

    for (name, prim) in [
        ("binary log", binaryish(2, vec![0.6, 0.4], 0.8, &|a, t| 0.6 * f64::from(a == 1) + 1.5 * (1.0 + t).ln())),
        ("three-state sqrt", binaryish(3, vec![0.5, 0.3, 0.2], 1.0, &|a, t| [0.0, 1.0, 0.5][a] + (1.0 + 2.0 * t).sqrt())),
    ] {
        let gp = GridProblem::with_lattice(prim, 101).unwrap();
        let sol = solve_relaxed(&gp).unwrap();
        let d = time_risk_diagnostics(&gp, &sol.f, &sol.certificate());
        r.clause(
            d.t_bar - d.t_under <= 1,
            format!("separable concave ({name}): support times {:?} span at most one step", sol.f.support_times(1e-12)),
        );
    }
}

fn criterion_5(r: &mut Report) {
    let start = Instant::now();
    let prob = CensorshipProblem::new(Prior::uniform(), 1.0, 0.9).unwrap();
    let d = prob.backward_rhs(0.0, 1.0);
    r.clause(d == (0.0, -2.0), format!("initial backward derivatives {d:?} = (0, -2)"));
    let upper = prob.theta_star_upper();
    r.clause(upper == 0.75, format!("theta* upper bound {upper} = 0.75"));
    let pol = build_policy(&prob).unwrap();
    let ident = verify_identities(&prob, &pol, 1e-6);
    r.clause(
        ident.passed,
        format!(
            "identity residuals at step 1e-4: forward {:.1e}/{:.1e}, no upward surprise {:.1e}, indifference {:.1e} <= 1e-6",
            ident.forward_alpha, ident.forward_beta, ident.no_upward_surprise, ident.indifference
        ),
    );
    let payoff = policy_payoff(&prob, &pol);
    let gp = discretize_for_oracle(&prob, 21, 9, pol.horizon).unwrap();
    let lp = solve_relaxed(&gp).unwrap();
    let rel = (lp.objective - payoff) / payoff;
    r.clause(
        rel.abs() <= 0.03,
        format!("21 x 9 oracle {:.4e} vs policy {payoff:.4e}: {:+.1}% (bound 3%)", lp.objective, 100.0 * rel),
    );
    r.within(start.elapsed(), 20.0, "criterion");
}

fn criterion_6(r: &mut Report) {
    let start = Instant::now();
    let spec = GoalpostsSpec::reference();
    let g = goalposts_strategies(&spec, 0.025).unwrap();
    let cf = &g.closed_form;
    let mu_bar = (1f64.exp() - 1.0) / 2.5;
    let checks = [
        ("tau_bar = ln 3.5", cf.tau_bar, 3.5f64.ln()),
        ("t* = 2 - ln 3.5", cf.t_star, 2.0 - 3.5f64.ln()),
        ("mu_bar = (e - 1)/2.5", cf.mu_bar, mu_bar),
        ("reveal mass (0.8 - mu_bar)/(1 - mu_bar)", cf.reveal_mass_mu_bar, (0.8 - mu_bar) / (1.0 - mu_bar)),
    ];
    for (what, got, want) in checks {
        r.clause((got - want).abs() <= 1e-9, format!("{what}: {got:.12}"));
    }
    r.clause((cf.reveal_mass_mu_bar - 0.36038).abs() <= 1e-5, "reveal mass rounds to 0.36038");

    let util = build_indirect(&g.primitives).unwrap();
    let gp = GridProblem::with_lattice(g.primitives.clone(), 101).unwrap();
    let (lt, li) = (g.teleport.outcome_law(), g.inch.outcome_law());
    r.clause(law_distance(&lt, &li) <= 1e-6, "teleporting and inching have the same outcome law");
    let (vt, vi) = (lt.expected_v(&util), li.expected_v(&util));
    r.clause((vt - vi).abs() <= 1e-9, format!("same principal payoff ({vt:.9} vs {vi:.9})"));

    let si = interim_surplus(&g.inch, &util, 1e-9);
    let di = verify_dc1(&g.inch, &gp, 1e-6).unwrap();
    r.clause(si.max_surplus.abs() <= 1e-9 && si.zero_surplus, format!("inching has zero surplus ({:.1e})", si.max_surplus));
    r.clause(di.verdict == Dc1Verdict::Pass, format!("inching passes DC1 ({:?})", di.verdict));

    let st = interim_surplus(&g.teleport, &util, 1e-9);
    let dt = verify_dc1(&g.teleport, &gp, 1e-6).unwrap();
    let interior = |node: Option<usize>, p: &FiniteBeliefProcess| {
        node.is_some_and(|i| {
            let k = p.nodes[i].time;
            k > 0 && k + 1 < p.times.len()
        })
    };
    r.clause(
        !st.zero_surplus && interior(st.worst_node, &g.teleport),
        format!("teleporting has positive surplus {:.3e} at an interior node", st.max_surplus),
    );
    r.clause(
        dt.verdict == Dc1Verdict::Fail && interior(dt.worst_node, &g.teleport),
        format!("teleporting fails DC1 at an interior node (gap {:.3e})", dt.worst_gap),
    );
    r.within(start.elapsed(), 30.0, "criterion");
}

fn criterion_7(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_law, mut worst_value, mut worst_surplus) = (0.0f64, 0.0f64, 0.0f64);
    let mut total_splits = 0;
    for _ in 0..10 {
        let prim = common::delay_rewarding(&mut rng);
        let gp = GridProblem::with_lattice(prim.clone(), 101).unwrap();
        let util = build_indirect(&prim).unwrap();
        let f = solve_relaxed(&gp).unwrap().f.merged(1e-12);
        let rec = to_simple_recommendation(&f, &util).unwrap();
        let proc = FiniteBeliefProcess::from_recommendation(&rec, &prim.prior);
        let (z, splits) = make_zero_surplus(&proc, &util, 1e-12).unwrap();
        total_splits += splits.len();
        let law = z.outcome_law();
        worst_law = worst_law.max(law_distance(&f, &law));
        worst_value = worst_value.max((law.expected_v(&util) - f.expected_v(&util)).abs());
        let s = interim_surplus(&z, &util, 1e-9);
        worst_surplus = worst_surplus.max(s.max_surplus.abs()).max(s.min_surplus.abs());
    }
    r.clause(total_splits > 0, format!("the 10 instances needed {total_splits} splits"));
    r.clause(worst_law <= 1e-9, format!("outcome law preserved (max distance {worst_law:.1e})"));
    r.clause(worst_value <= 1e-9, format!("E[V] preserved (max change {worst_value:.1e})"));
    r.clause(worst_surplus <= 1e-9, format!("zero surplus at every node (max {worst_surplus:.1e})"));
}

fn criterion_8(r: &mut Report) {
    let res = coase_demo(&CoaseSpec::canonical()).unwrap();
    r.clause(res.full_revelation_at_first, "principal-preferred equilibrium reveals the state in period 1");
    r.clause(
        res.max_deviation_gain <= 1e-9,
        format!("largest one-shot deviation gain {:.1e} <= 1e-9", res.max_deviation_gain),
    );
}

fn criterion_9(r: &mut Report) {
    let spec =
        BinaryPersuasionSpec::new(0.4, 0.0, 0.546, DelayGain::Log { scale: 0.5 }, DelayGain::Log { scale: 1.0 }).unwrap();
    let instances: [(&str, Box<dyn Fn(usize) -> Primitives>); 2] = [
        ("binary log gains", Box::new(|n| spec.to_primitives(common::even_times(n, 1.2)).unwrap())),
        (
            "three-state saturating gains",
            Box::new(|n| {
                Primitives::from_fn(
                    3,
                    3,
                    common::even_times(n, 1.0),
                    vec![0.45, 0.35, 0.2],
                    |s, a, t| f64::from(s == a) - 0.7 * t,
                    |_, a, t| [0.1, 0.8, 0.5][a] + [0.5, 0.3, 0.9][a] * (1.0 - (-t).exp()),
                )
                .unwrap()
            }),
        ),
    ];
    for (name, build) in instances {
        let values: Vec<f64> = [7, 13, 25, 49]
            .iter()
            .map(|&n| solve_relaxed(&GridProblem::with_lattice(build(n), 101).unwrap()).unwrap().objective)
            .collect();
        let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let decreasing = diffs.windows(2).all(|w| w[1] < w[0]);
        let shown: Vec<String> = diffs.iter().map(|d| format!("{d:.2e}")).collect();
        r.clause(decreasing, format!("{name}: successive differences {} strictly decrease", shown.join(" > ")));
    }
}

fn main() -> ExitCode {
    let criteria: [(u8, fn(&mut Report)); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut failures = 0;
    for (n, f) in criteria {
        let mut report = Report::default();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut report)));
        let passed = outcome.is_ok() && report.failed.is_empty();
        println!("criterion {n}: {}", if passed { "PASS" } else { "FAIL" });
        for line in &report.lines {
            println!("{line}");
        }
        if outcome.is_err() {
            println!("    [FAILED] panicked");
        }
        failures += usize::from(!passed);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
