//! Shadow prices by min-max, the first-order verifier and time-risk diagnostics.
//!
//! For a dual pair `(Lambda, b)` indexed by grid time, the payoff of a stop
//! at `(mu, t_k)` after interim beliefs `nu_0, .., nu_{k-1}` is
//!
//! ```text
//! Phi = V(mu, k) + Lambda_k U(mu, k) - Lambda_0 U(mu0, 0) - b_k . mu + b_0 . mu0
//!     + sum_{j < k} [ (b_{j+1} - b_j) . nu_j - (Lambda_{j+1} - Lambda_j) U(nu_j, j) ]
//! ```
//!
//! For nondecreasing nonnegative `Lambda`, `max Phi` over grid stops and
//! simplex-valued `nu` is an upper bound on the grid program's value, and the
//! bound is tight at the optimum. [`solve_saddle`] runs projected
//! subgradient descent on that bound, then recovers a primal solution from a
//! program restricted to the stops the inner maximization keeps returning,
//! growing the restriction until the bound and the primal value meet.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{continuation_belief, occ_residuals, BeliefTimeDistribution};
use crate::numeric::dot;
use crate::oracle::simplex::{LpStatus, SimplexOptions};
use crate::oracle::{solve_layout, GridProblem, Layout, LpSolution};

/// Shadow prices `Lambda`, hyperplanes `b` (one per grid time) and the
/// supporting vector `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub lambda: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    /// Upper value `max Phi` at these prices, when evaluated.
    pub value: f64,
}

impl DualCertificate {
    pub fn zeros(n_times: usize, n_states: usize) -> DualCertificate {
        DualCertificate {
            lambda: vec![0.0; n_times],
            b: vec![vec![0.0; n_states]; n_times],
            a: vec![0.0; n_states],
            value: f64::NAN,
        }
    }

    /// `Lambda_0 >= 0` and `Lambda` nondecreasing, within `tol`.
    pub fn is_dual_feasible(&self, tol: f64) -> bool {
        self.lambda.first().map_or(true, |l| *l >= -tol) && self.lambda.windows(2).all(|w| w[1] >= w[0] - tol)
    }
}

impl LpSolution {
    /// The certificate carried by the program's multipliers: `Lambda` sums the
    /// obedience multipliers of earlier times, `b_0 = a` and each `b` step adds
    /// the multiplier-weighted piece coefficients.
    pub fn certificate(&self) -> DualCertificate {
        let nt = self.duals.increments.len() + 1;
        let n = self.duals.support.len();
        let mut lambda = vec![0.0; nt];
        let mut b = vec![self.duals.support.clone(); nt];
        for k in 1..nt {
            lambda[k] = lambda[k - 1] + self.duals.increments[k - 1];
            let mut step = vec![0.0; n];
            for row in self.duals.rows.iter().filter(|r| r.time == k - 1) {
                for (x, c) in step.iter_mut().zip(&row.coef) {
                    *x += row.multiplier * c;
                }
            }
            b[k] = b[k - 1].iter().zip(&step).map(|(x, y)| x + y).collect();
        }
        DualCertificate { lambda, b, a: self.duals.support.clone(), value: self.objective }
    }
}

/// Subgradient of `Phi` with respect to `(Lambda, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgradient {
    pub lambda: Vec<f64>,
    pub b: Vec<Vec<f64>>,
}

impl Subgradient {
    fn zeros(nt: usize, n: usize) -> Subgradient {
        Subgradient { lambda: vec![0.0; nt], b: vec![vec![0.0; n]; nt] }
    }
}

/// `Phi` at interim beliefs `nu[j]` (for `j < tau`), stop `(mu, tau)`, with
/// its subgradient. `Phi` is affine in the certificate.
pub fn eval_phi(gp: &GridProblem, cert: &DualCertificate, nu: &[Vec<f64>], mu: &[f64], tau: usize) -> (f64, Subgradient) {
    let util = &gp.util;
    let mu0 = &gp.prim.prior;
    let n = mu.len();
    let nt = gp.n_times();
    let mut g = Subgradient::zeros(nt, n);
    let u_stop = util.eval_u(mu, tau);
    let u0 = util.eval_u(mu0, 0);
    let mut val = util.eval_v(mu, tau) + cert.lambda[tau] * u_stop - cert.lambda[0] * u0 - dot(&cert.b[tau], mu)
        + dot(&cert.b[0], mu0);
    g.lambda[tau] += u_stop;
    g.lambda[0] -= u0;
    for s in 0..n {
        g.b[tau][s] -= mu[s];
        g.b[0][s] += mu0[s];
    }
    for j in 0..tau {
        let u_nu = util.eval_u(&nu[j], j);
        let db: Vec<f64> = cert.b[j + 1].iter().zip(&cert.b[j]).map(|(x, y)| x - y).collect();
        val += dot(&db, &nu[j]) - (cert.lambda[j + 1] - cert.lambda[j]) * u_nu;
        g.lambda[j + 1] -= u_nu;
        g.lambda[j] += u_nu;
        for s in 0..n {
            g.b[j + 1][s] += nu[j][s];
            g.b[j][s] -= nu[j][s];
        }
    }
    (val, g)
}

/// Corner points of the linearity regions of `U(., t)` on the simplex.
///
/// A concave piecewise-linear function of `nu` whose pieces follow those of
/// `U(., t)` peaks at one of these points, which makes the interim
/// maximization exact. With more than three states the enumeration is
/// replaced by the belief grid itself and the maximization is over the grid.
pub fn region_vertices(gp: &GridProblem, t: usize) -> Vec<Vec<f64>> {
    let n = gp.prim.n_states();
    let pieces = gp.util.undominated_pieces(t);
    // Hyperplanes through the origin: facets, then pairwise piece equalities.
    let mut planes: Vec<(Vec<f64>, Option<(usize, usize)>)> = (0..n)
        .map(|s| {
            let mut e = vec![0.0; n];
            e[s] = 1.0;
            (e, None)
        })
        .collect();
    for p in 0..pieces.len() {
        for q in (p + 1)..pieces.len() {
            let d: Vec<f64> = pieces[p].coef.iter().zip(&pieces[q].coef).map(|(x, y)| x - y).collect();
            if d.iter().any(|x| x.abs() > 1e-14) {
                planes.push((d, Some((p, q))));
            }
        }
    }
    let combos = binom(planes.len(), n - 1);
    if n > 3 || combos > 2_000_000 {
        let mut out: Vec<Vec<f64>> = gp.beliefs.clone();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        return out;
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut push = |v: Vec<f64>| {
        if !out.iter().any(|w| w.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-11)) {
            out.push(v);
        }
    };
    if n == 1 {
        push(vec![1.0]);
        return out;
    }
    if planes.len() < n - 1 {
        return out;
    }
    let mut idx: Vec<usize> = (0..n - 1).collect();
    loop {
        let mut m: Vec<Vec<f64>> = idx.iter().map(|&h| planes[h].0.clone()).collect();
        let mut rhs = vec![0.0; n - 1];
        m.push(vec![1.0; n]);
        rhs.push(1.0);
        if let Some(x) = solve_small(m, rhs) {
            let inside = x.iter().all(|v| *v >= -1e-12);
            if inside {
                let x: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
                let best = pieces.iter().map(|p| dot(&p.coef, &x)).fold(f64::NEG_INFINITY, f64::max);
                let on_top = idx.iter().all(|&h| match planes[h].1 {
                    None => true,
                    Some((p, q)) => {
                        let tol = 1e-10 * (1.0 + best.abs());
                        dot(&pieces[p].coef, &x) >= best - tol && dot(&pieces[q].coef, &x) >= best - tol
                    }
                });
                if on_top {
                    push(x);
                }
            }
        }
        // advance to the next (n - 1)-subset in lexicographic order
        let k = n - 1;
        let m = planes.len();
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < m - k + i {
                idx[i] += 1;
                for j in (i + 1)..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(p, c);
        b.swap(p, c);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                if f != 0.0 {
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Precomputed interim candidates and their `U` values, one list per time.
#[derive(Debug, Clone)]
pub struct InnerCache {
    cands: Vec<Vec<Vec<f64>>>,
    cand_u: Vec<Vec<f64>>,
}

impl InnerCache {
    pub fn new(gp: &GridProblem) -> InnerCache {
        let nt = gp.n_times();
        let cands: Vec<Vec<Vec<f64>>> = (0..nt.saturating_sub(1)).into_par_iter().map(|j| region_vertices(gp, j)).collect();
        let cand_u = cands.iter().enumerate().map(|(j, c)| c.iter().map(|v| gp.util.eval_u(v, j)).collect()).collect();
        InnerCache { cands, cand_u }
    }
}

/// Result of the inner maximization.
#[derive(Debug, Clone)]
pub struct InnerMax {
    /// Maximizing interim belief for every non-terminal time.
    pub nu: Vec<Vec<f64>>,
    /// Grid index of the maximizing stopping belief.
    pub mu: usize,
    pub tau: usize,
    pub value: f64,
    /// Every grid stop `(belief, time)` within 1e-9 of the maximum.
    pub ties: Vec<(usize, usize)>,
    /// Best value per stopping time.
    pub by_time: Vec<f64>,
}

/// Maximizes `Phi` period by period: exactly over interim beliefs, by
/// enumeration over grid stops and stopping times.
pub fn inner_maximize(gp: &GridProblem, cert: &DualCertificate, cache: &InnerCache) -> InnerMax {
    inner_maximize_eps(gp, cert, cache, 1e-9).0
}

fn inner_maximize_eps(
    gp: &GridProblem,
    cert: &DualCertificate,
    cache: &InnerCache,
    eps: f64,
) -> (InnerMax, Vec<(usize, usize)>) {
    let nt = gp.n_times();
    let mu0 = &gp.prim.prior;
    let mut nu = Vec::with_capacity(nt.saturating_sub(1));
    let mut h = Vec::with_capacity(nt.saturating_sub(1));
    for j in 0..nt.saturating_sub(1) {
        let db: Vec<f64> = cert.b[j + 1].iter().zip(&cert.b[j]).map(|(x, y)| x - y).collect();
        let dl = cert.lambda[j + 1] - cert.lambda[j];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (c, v) in cache.cands[j].iter().enumerate() {
            let val = dot(&db, v) - dl * cache.cand_u[j][c];
            if val > best.0 + 1e-15 {
                best = (val, c);
            }
        }
        h.push(best.0);
        nu.push(cache.cands[j][best.1].clone());
    }
    let base = -cert.lambda[0] * gp.util.eval_u(mu0, 0) + dot(&cert.b[0], mu0);
    let mut offset = vec![base; nt];
    for k in 1..nt {
        offset[k] = offset[k - 1] + h[k - 1];
    }
    let per_time = |k: usize| -> (f64, usize, Vec<f64>) {
        let mut vals = Vec::with_capacity(gp.n_beliefs());
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 0..gp.n_beliefs() {
            let v = gp.v_tab[i][k] + cert.lambda[k] * gp.u_tab[i][k] - dot(&cert.b[k], &gp.beliefs[i]) + offset[k];
            if v > best.0 {
                best = (v, i);
            }
            vals.push(v);
        }
        (best.0, best.1, vals)
    };
    let results: Vec<(f64, usize, Vec<f64>)> = if gp.n_beliefs() * nt > 20_000 {
        (0..nt).into_par_iter().map(per_time).collect()
    } else {
        (0..nt).map(per_time).collect()
    };
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (k, r) in results.iter().enumerate() {
        if r.0 > best.0 {
            best = (r.0, r.1, k);
        }
    }
    let mut ties = Vec::new();
    let mut near = Vec::new();
    for (k, r) in results.iter().enumerate() {
        for (i, v) in r.2.iter().enumerate() {
            if *v >= best.0 - 1e-9 {
                ties.push((i, k));
            }
            if *v >= best.0 - eps {
                near.push((i, k));
            }
        }
    }
    let by_time = results.iter().map(|r| r.0).collect();
    (InnerMax { nu, mu: best.1, tau: best.2, value: best.0, ties, by_time }, near)
}

/// Euclidean projection onto nondecreasing sequences, by pool-adjacent-violators.
pub fn pava(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, w2) = blocks[blocks.len() - 1];
            let (m1, w1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 as f64 + m2 * w2 as f64) / w as f64, w);
        }
    }
    blocks.into_iter().flat_map(|(m, w)| std::iter::repeat(m).take(w)).collect()
}

/// Projection onto nonnegative nondecreasing sequences.
///
/// ```
/// use persuade::saddle::project_monotone;
/// assert_eq!(project_monotone(&[2.0, 1.0, 3.0]), vec![1.5, 1.5, 3.0]);
/// assert_eq!(project_monotone(&[-1.0, 0.0, 1.0]), vec![0.0, 0.0, 1.0]);
/// ```
pub fn project_monotone(y: &[f64]) -> Vec<f64> {
    pava(y).into_iter().map(|v| v.max(0.0)).collect()
}

/// One projected subgradient step with step size `eta0 / sqrt(k)`.
pub fn outer_step(cert: &DualCertificate, g: &Subgradient, k: usize, eta0: f64) -> DualCertificate {
    let eta = eta0 / (k.max(1) as f64).sqrt();
    let raw: Vec<f64> = cert.lambda.iter().zip(&g.lambda).map(|(l, d)| l - eta * d).collect();
    let b = cert
        .b
        .iter()
        .zip(&g.b)
        .map(|(bk, gk)| bk.iter().zip(gk).map(|(x, d)| x - eta * d).collect())
        .collect();
    DualCertificate { lambda: project_monotone(&raw), b, a: cert.b[0].clone(), value: f64::NAN }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SaddleConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub eta0: f64,
    /// Subgradient iterations before the first recovery round.
    pub warm_iters: usize,
    /// Stops within this of the inner maximum join the recovery support.
    pub support_eps: f64,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig { tol: 1e-5, max_iters: 200_000, eta0: 1.0, warm_iters: 400, support_eps: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaddleStatus {
    Converged,
    /// Budget exhausted; the report still carries the best bounds found.
    NotConverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleReport {
    pub certificate: DualCertificate,
    pub primal: BeliefTimeDistribution,
    /// Recovered primal value `E_f[V]`.
    pub value: f64,
    /// Best upper bound `max Phi` found.
    pub dual_value: f64,
    pub duality_gap: f64,
    pub foc_max_violation: f64,
    pub iterations: usize,
    pub recovery_rounds: usize,
    pub status: SaddleStatus,
}

/// Runs the min-max algorithm with primal recovery.
pub fn solve_saddle(gp: &GridProblem, config: &SaddleConfig) -> Result<SaddleReport> {
    let nt = gp.n_times();
    let n = gp.prim.n_states();
    let cache = InnerCache::new(gp);
    let mu0_idx = gp.belief_index(&gp.prim.prior).expect("grid holds the prior");
    let mut cert = DualCertificate::zeros(nt, n);
    let mut avg = DualCertificate::zeros(nt, n);
    let mut avg_count = 0usize;
    let mut support: Vec<(usize, usize)> = vec![(mu0_idx, 0)];
    let add = |support: &mut Vec<(usize, usize)>, c: (usize, usize)| {
        if !support.contains(&c) {
            support.push(c);
        }
    };
    let mut best_upper = f64::INFINITY;
    let mut best_upper_cert = cert.clone();
    let warm = config.warm_iters.min(config.max_iters);
    let mut iterations = 0usize;
    for k in 1..=warm {
        let (im, near) = inner_maximize_eps(gp, &cert, &cache, config.support_eps);
        if im.value < best_upper {
            best_upper = im.value;
            best_upper_cert = cert.clone();
            best_upper_cert.value = im.value;
        }
        if 2 * k > warm {
            for c in near.into_iter().take(64) {
                add(&mut support, c);
            }
            accumulate(&mut avg, &cert, &mut avg_count);
        }
        let (_, g) = eval_phi(gp, &cert, &im.nu, &gp.beliefs[im.mu], im.tau);
        cert = outer_step(&cert, &g, k, config.eta0);
        iterations += 1;
    }
    if avg_count > 0 {
        let mut a = avg.clone();
        finish_average(&mut a, avg_count);
        let im = inner_maximize(gp, &a, &cache);
        if im.value < best_upper {
            best_upper = im.value;
            a.value = im.value;
            best_upper_cert = a;
        }
    }
    let opts = SimplexOptions::default();
    let mut rounds = 0usize;
    let mut primal;
    loop {
        rounds += 1;
        let layout = Layout { gp, cols: support.clone(), prior: gp.prim.prior.clone(), start: 0 };
        let sol = solve_layout(&layout, &opts)?;
        if sol.status != LpStatus::Optimal {
            return Err(crate::Error::NoConvergence {
                what: "saddle recovery".into(),
                detail: format!("restricted program {:?}", sol.status),
            });
        }
        let lp_cert = sol.certificate();
        let (im, near) = inner_maximize_eps(gp, &lp_cert, &cache, 0.0);
        if im.value < best_upper {
            best_upper = im.value;
            best_upper_cert = lp_cert.clone();
            best_upper_cert.value = im.value;
        }
        let gap = best_upper - sol.objective;
        iterations += 1;
        // Stops priced above the restricted optimum enter the support.
        let mut entering = Vec::new();
        for k in 0..nt {
            for i in 0..gp.n_beliefs() {
                let l = gp.v_tab[i][k] + lp_cert.lambda[k] * gp.u_tab[i][k]
                    - dot(&lp_cert.b[k], &gp.beliefs[i])
                    + dot(&lp_cert.b[0], &gp.beliefs[i]);
                let r = l - dot(&lp_cert.a, &gp.beliefs[i]);
                if r > 1e-10 && !support.contains(&(i, k)) {
                    entering.push((r, i, k));
                }
            }
        }
        entering.sort_by(|x, y| y.0.total_cmp(&x.0));
        let done = gap < config.tol || entering.is_empty() || iterations >= config.max_iters;
        primal = Some((sol, gap));
        if done {
            break;
        }
        for c in near {
            add(&mut support, c);
        }
        for (_, i, k) in entering.into_iter().take(4 * nt + 8) {
            add(&mut support, (i, k));
        }
    }
    let (sol, gap) = primal.expect("at least one recovery round");
    let lp_cert = sol.certificate();
    let foc = verify_foc(gp, &sol.f, &lp_cert, Selection::Certificate, 1e-6);
    let status = if gap < config.tol { SaddleStatus::Converged } else { SaddleStatus::NotConverged };
    Ok(SaddleReport {
        certificate: best_upper_cert,
        value: sol.objective,
        dual_value: best_upper,
        duality_gap: gap,
        foc_max_violation: foc.max_violation.max(foc.support_gap),
        primal: sol.f,
        iterations,
        recovery_rounds: rounds,
        status,
    })
}

fn accumulate(avg: &mut DualCertificate, c: &DualCertificate, count: &mut usize) {
    for (a, x) in avg.lambda.iter_mut().zip(&c.lambda) {
        *a += x;
    }
    for (ab, cb) in avg.b.iter_mut().zip(&c.b) {
        for (a, x) in ab.iter_mut().zip(cb) {
            *a += x;
        }
    }
    *count += 1;
}

fn finish_average(avg: &mut DualCertificate, count: usize) {
    let w = 1.0 / count as f64;
    avg.lambda.iter_mut().for_each(|x| *x *= w);
    avg.b.iter_mut().flat_map(|b| b.iter_mut()).for_each(|x| *x *= w);
    avg.a = avg.b[0].clone();
}

/// How `verify_foc` forms the hyperplane term of the Lagrangian derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    /// Use the certificate's `b` path as given.
    Certificate,
    /// Rebuild it from `f`: before the last stopping time, take the piece at
    /// the continuation belief that is largest at the evaluated belief;
    /// afterwards, the piece attaining `U` at the evaluated belief.
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocReport {
    /// `max (l - a . mu)` over grid stops; must be at most the tolerance.
    pub max_violation: f64,
    /// `max |l - a . mu|` over the support of `f`.
    pub support_gap: f64,
    pub occ_residuals: Vec<f64>,
    /// `|L(f, Lambda) - E_f[V]|`.
    pub complementary_slackness: f64,
    pub dual_feasible: bool,
    pub passed: bool,
}

/// Checks the first-order conditions: `l <= a . mu` everywhere with equality
/// on the support of `f`, obedience, complementary slackness and dual
/// feasibility, where `l(mu, t) = V + Lambda_t U - (b_t - b_0) . mu`.
pub fn verify_foc(
    gp: &GridProblem,
    f: &BeliefTimeDistribution,
    cert: &DualCertificate,
    selection: Selection,
    tol: f64,
) -> FocReport {
    let nt = gp.n_times();
    let util = &gp.util;
    let cont: Vec<Option<Vec<f64>>> = (0..nt).map(|j| continuation_belief(f, j)).collect();
    let t_bar = f.support_times(1e-12).last().copied().unwrap_or(0);
    let hyper = |mu: &[f64], k: usize| -> f64 {
        match selection {
            Selection::Certificate => dot(&cert.b[k], mu) - dot(&cert.b[0], mu),
            Selection::Canonical => (0..k)
                .map(|j| {
                    let dl = cert.lambda[j + 1] - cert.lambda[j];
                    if dl == 0.0 {
                        return 0.0;
                    }
                    let g = match (&cont[j], j < t_bar) {
                        (Some(m), true) => util
                            .attaining(m, j, 1e-12 * (1.0 + util.eval_u(m, j).abs()))
                            .iter()
                            .map(|p| dot(&p.coef, mu))
                            .fold(f64::NEG_INFINITY, f64::max),
                        _ => util.eval_u(mu, j),
                    };
                    dl * g
                })
                .sum(),
        }
    };
    let l = |mu: &[f64], k: usize| util.eval_v(mu, k) + cert.lambda[k] * util.eval_u(mu, k) - hyper(mu, k);
    let per_time: Vec<f64> = (0..nt)
        .into_par_iter()
        .map(|k| {
            gp.beliefs.iter().map(|mu| l(mu, k) - dot(&cert.a, mu)).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let max_violation = per_time.into_iter().fold(f64::NEG_INFINITY, f64::max);
    let support_gap = f
        .atoms
        .iter()
        .filter(|a| a.weight > 1e-12)
        .map(|a| (l(&a.belief, a.time) - dot(&cert.a, &a.belief)).abs())
        .fold(0.0, f64::max);
    let res = occ_residuals(f, util);
    let eu = f.expected_u(util);
    let mut cs = cert.lambda[0] * (eu - util.eval_u(&gp.prim.prior, 0));
    for j in 0..nt - 1 {
        cs += (cert.lambda[j + 1] - cert.lambda[j]) * res[j];
    }
    let cs = cs.abs();
    let dual_feasible = cert.is_dual_feasible(1e-9);
    let min_res = res.iter().copied().fold(f64::INFINITY, f64::min);
    let passed = max_violation <= tol && support_gap <= tol && cs <= tol && dual_feasible && min_res >= -1e-9;
    FocReport { max_violation, support_gap, occ_residuals: res, complementary_slackness: cs, dual_feasible, passed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Whether the pooled obedience constraint binds (within 1e-6) at each non-terminal time.
    pub binding_mask: Vec<bool>,
    /// Extremal forward differences in time over the grid, one per grid step.
    pub jbar_v: Vec<f64>,
    pub junder_v: Vec<f64>,
    pub jbar_u: Vec<f64>,
    pub junder_u: Vec<f64>,
    /// First and last stopping times of `f` (grid indices).
    pub t_under: usize,
    pub t_bar: usize,
    /// Grid index bounding the last stopping time.
    pub window_bound: usize,
    /// Whether every second difference of `U` and `V` in time is negative.
    pub concave_in_time: bool,
    /// On time-concave instances, whether the support lies in `[t_under, window_bound]`.
    pub window_ok: Option<bool>,
    /// Whether the shadow prices strictly increase up to the last stopping time.
    pub lambda_increasing: bool,
}

/// Binding pattern of obedience and the persuasion-window bound.
pub fn time_risk_diagnostics(gp: &GridProblem, f: &BeliefTimeDistribution, cert: &DualCertificate) -> DiagnosticsReport {
    let nt = gp.n_times();
    let times = &gp.prim.times;
    let res = occ_residuals(f, &gp.util);
    let binding_mask = res.iter().map(|r| r.abs() <= 1e-6).collect();
    let diff = |tab: &Vec<Vec<f64>>| -> (Vec<f64>, Vec<f64>) {
        (0..nt - 1)
            .map(|k| {
                let dt = times[k + 1] - times[k];
                let ds = tab.iter().map(|row| (row[k + 1] - row[k]) / dt);
                ds.fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), d| (hi.max(d), lo.min(d)))
            })
            .unzip()
    };
    let (jbar_v, junder_v) = diff(&gp.v_tab);
    let (jbar_u, junder_u) = diff(&gp.u_tab);
    let st = f.support_times(1e-12);
    let t_under = st.first().copied().unwrap_or(0);
    let t_bar = st.last().copied().unwrap_or(0);
    let invert = |jbar: &[f64], target: f64| -> usize {
        (0..jbar.len()).filter(|&k| jbar[k] >= target - 1e-12).max().unwrap_or(t_under)
    };
    let tu = t_under.min(nt.saturating_sub(2));
    let window_bound = invert(&jbar_v, junder_v[tu]).max(invert(&jbar_u, junder_u[tu]));
    let concave = |tab: &Vec<Vec<f64>>| {
        tab.iter().all(|row| {
            (1..nt - 1).all(|k| {
                let d1 = (row[k] - row[k - 1]) / (times[k] - times[k - 1]);
                let d2 = (row[k + 1] - row[k]) / (times[k + 1] - times[k]);
                d2 - d1 < 0.0
            })
        })
    };
    let concave_in_time = nt > 2 && concave(&gp.v_tab) && concave(&gp.u_tab);
    let window_ok = concave_in_time.then(|| st.iter().all(|&k| k >= t_under && k <= window_bound.max(t_under)));
    let lambda_increasing = (0..t_bar).all(|k| cert.lambda[k + 1] > cert.lambda[k] + 1e-12) || t_bar == 0;
    DiagnosticsReport {
        binding_mask,
        jbar_v,
        junder_v,
        jbar_u,
        junder_u,
        t_under,
        t_bar,
        window_bound,
        concave_in_time,
        window_ok,
        lambda_increasing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Primitives;
    use crate::oracle::solve_relaxed;

    fn match_problem(prior_r: f64, times: Vec<f64>, cost: f64) -> GridProblem {
        let prim = Primitives::from_fn(
            2,
            2,
            times,
            vec![1.0 - prior_r, prior_r],
            move |s, a, t| if s == a { 1.0 - cost * t } else { -cost * t },
            |_, a, t| a as f64 + 0.3 * t,
        )
        .unwrap();
        GridProblem::with_lattice(prim, 21).unwrap()
    }

    #[test]
    fn phi_with_zero_duals_is_v() {
        let gp = match_problem(0.4, vec![0.0, 0.5, 1.0], 0.2);
        let cert = DualCertificate::zeros(3, 2);
        let nu = vec![vec![0.5, 0.5]; 2];
        for (i, mu) in gp.beliefs.iter().enumerate() {
            for k in 0..3 {
                assert_eq!(eval_phi(&gp, &cert, &nu, mu, k).0, gp.v_tab[i][k]);
            }
        }
    }

    #[test]
    fn phi_hand_expansion() {
        let gp = match_problem(0.4, vec![0.0, 0.5, 1.0], 0.2);
        let mut cert = DualCertificate::zeros(3, 2);
        cert.lambda = vec![0.0, 1.0, 1.0];
        let nu = vec![vec![0.3, 0.7], vec![0.9, 0.1]];
        let mu = [0.2, 0.8];
        let (v, g) = eval_phi(&gp, &cert, &nu, &mu, 2);
        let expect = gp.util.eval_v(&mu, 2) + gp.util.eval_u(&mu, 2) - gp.util.eval_u(&nu[0], 0);
        assert!((v - expect).abs() < 1e-14);
        // affine: value equals the subgradient dotted with the certificate plus the V term
        let lin: f64 = g.lambda.iter().zip(&cert.lambda).map(|(a, b)| a * b).sum::<f64>();
        assert!((v - gp.util.eval_v(&mu, 2) - lin).abs() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_monotone(&[2.0, 1.0, 3.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(project_monotone(&[-1.0, 0.0, 1.0]), vec![0.0, 0.0, 1.0]);
        let cert = DualCertificate::zeros(3, 2);
        let g = Subgradient::zeros(3, 2);
        let next = outer_step(&cert, &g, 1, 1.0);
        assert_eq!(next.lambda, cert.lambda);
        assert_eq!(next.b, cert.b);
    }

    #[test]
    fn region_vertices_of_match_model() {
        let gp = match_problem(0.4, vec![0.0, 1.0], 1.0);
        let mut v = region_vertices(&gp, 0);
        v.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(v.len(), 3);
        assert!((v[1][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lp_duals_pass_the_verifier_and_bound_phi() {
        let gp = match_problem(0.4, vec![0.0, 0.25, 0.5, 0.75, 1.0], 0.2);
        let sol = solve_relaxed(&gp).unwrap();
        let cert = sol.certificate();
        let rep = verify_foc(&gp, &sol.f, &cert, Selection::Certificate, 1e-7);
        assert!(rep.passed, "{rep:?}");
        let im = inner_maximize(&gp, &cert, &InnerCache::new(&gp));
        assert!((im.value - sol.objective).abs() < 1e-8, "{} vs {}", im.value, sol.objective);
    }

    #[test]
    fn saddle_matches_oracle() {
        let gp = match_problem(0.4, vec![0.0, 0.25, 0.5, 0.75, 1.0], 0.2);
        let sol = solve_relaxed(&gp).unwrap();
        let rep = solve_saddle(&gp, &SaddleConfig::default()).unwrap();
        assert_eq!(rep.status, SaddleStatus::Converged);
        assert!((rep.value - sol.objective).abs() < 1e-6);
        assert!(rep.dual_value >= rep.value - 1e-9);
    }

    #[test]
    fn perturbed_support_breaks_slackness() {
        let gp = match_problem(0.4, vec![0.0, 0.25, 0.5, 0.75, 1.0], 0.2);
        let sol = solve_relaxed(&gp).unwrap();
        let cert = sol.certificate();
        let mut f = sol.f.clone();
        let last = f.atoms.len() - 1;
        f.atoms[last].weight += 1e-2;
        let rep = verify_foc(&gp, &f, &cert, Selection::Certificate, 1e-6);
        assert!(rep.complementary_slackness > 1e-4, "{rep:?}");
        assert!(!rep.passed);
    }
}
