//! Problem primitives, indirect utilities and belief-time distributions.
//!
//! Beliefs are always full probability vectors over the states, even with two
//! states. Times are referred to by their index on the problem's grid; the
//! last grid time is terminal and carries no obedience constraint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::dot;

/// Numerical tolerances used across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Slack allowed on feasibility checks (obedience, prior consistency).
    pub feasibility: f64,
    /// Slack allowed on pure arithmetic identities (sums to one, ties).
    pub arithmetic: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { feasibility: 1e-9, arithmetic: 1e-12 }
    }
}

/// The problem statement: states, actions, a time grid, a prior and the two
/// payoff tensors, each indexed `[state][action][time]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitives {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub times: Vec<f64>,
    pub prior: Vec<f64>,
    /// Agent payoff `u[state][action][time]`.
    pub u: Vec<Vec<Vec<f64>>>,
    /// Principal payoff `v[state][action][time]`.
    pub v: Vec<Vec<Vec<f64>>>,
}

impl Primitives {
    /// Builds and validates a problem.
    pub fn new(
        states: Vec<String>,
        actions: Vec<String>,
        times: Vec<f64>,
        prior: Vec<f64>,
        u: Vec<Vec<Vec<f64>>>,
        v: Vec<Vec<Vec<f64>>>,
    ) -> Result<Primitives> {
        let p = Primitives { states, actions, times, prior, u, v };
        p.validate()?;
        Ok(p)
    }

    /// Builds a problem from payoff functions `u(state, action, time)` and
    /// `v(state, action, time)`, with generated labels.
    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        times: Vec<f64>,
        prior: Vec<f64>,
        u: impl Fn(usize, usize, f64) -> f64,
        v: impl Fn(usize, usize, f64) -> f64,
    ) -> Result<Primitives> {
        let tensor = |f: &dyn Fn(usize, usize, f64) -> f64| {
            (0..n_states)
                .map(|s| (0..n_actions).map(|a| times.iter().map(|&t| f(s, a, t)).collect()).collect())
                .collect::<Vec<Vec<Vec<f64>>>>()
        };
        let ut = tensor(&u);
        let vt = tensor(&v);
        Primitives::new(
            (0..n_states).map(|s| format!("s{s}")).collect(),
            (0..n_actions).map(|a| format!("a{a}")).collect(),
            times,
            prior,
            ut,
            vt,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if n == 0 {
            return Err(Error::invalid("states", "empty state set"));
        }
        if self.actions.is_empty() {
            return Err(Error::invalid("actions", "empty action set"));
        }
        if self.times.len() < 2 {
            return Err(Error::invalid("times", "need at least two grid times"));
        }
        if self.times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid("times", "times must be finite and nonnegative"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("times", "times must be strictly increasing"));
        }
        if self.prior.len() != n {
            return Err(Error::invalid("prior", format!("length {} != {} states", self.prior.len(), n)));
        }
        if self.prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("prior", "entries must be nonnegative"));
        }
        let total: f64 = self.prior.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("prior", format!("sums to {total}, not 1")));
        }
        for (name, tensor) in [("u", &self.u), ("v", &self.v)] {
            if tensor.len() != n {
                return Err(Error::invalid(name, "first dimension must match states"));
            }
            for row in tensor {
                if row.len() != self.actions.len() {
                    return Err(Error::invalid(name, "second dimension must match actions"));
                }
                for col in row {
                    if col.len() != self.times.len() {
                        return Err(Error::invalid(name, "third dimension must match times"));
                    }
                    if col.iter().any(|x| !x.is_finite()) {
                        return Err(Error::invalid(name, "payoffs must be finite"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Index of the grid time equal to `t` (within 1e-9).
    pub fn time_index(&self, t: f64) -> Option<usize> {
        time_index(&self.times, t)
    }

    /// The same problem with the prior replaced.
    pub fn with_prior(&self, prior: Vec<f64>) -> Result<Primitives> {
        let mut p = self.clone();
        p.prior = prior;
        p.validate()?;
        Ok(p)
    }

    /// The problem restricted to grid times with index `>= from`.
    ///
    /// With a single remaining time the grid is padded by a dummy later time
    /// whose payoffs copy the last ones, so the result is always valid; the
    /// dummy adds nothing because the agent's payoffs at it repeat the last
    /// column.
    pub fn truncated(&self, from: usize, prior: Vec<f64>) -> Result<Primitives> {
        let mut keep: Vec<usize> = (from..self.times.len()).collect();
        let mut times: Vec<f64> = keep.iter().map(|&k| self.times[k]).collect();
        if keep.len() == 1 {
            keep.push(*keep.last().unwrap());
            times.push(times[0] + 1.0);
        }
        let cut = |tensor: &Vec<Vec<Vec<f64>>>| {
            tensor
                .iter()
                .map(|row| row.iter().map(|col| keep.iter().map(|&k| col[k]).collect()).collect())
                .collect()
        };
        Primitives::new(self.states.clone(), self.actions.clone(), times, prior, cut(&self.u), cut(&self.v))
    }
}

pub(crate) fn time_index(times: &[f64], t: f64) -> Option<usize> {
    times.iter().position(|&s| (s - t).abs() <= 1e-9)
}

/// One linear piece of the agent's indirect utility: take `action` and
/// stop acting at grid time `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub action: usize,
    pub time: usize,
    /// `u(., action, time)` as a vector over states.
    pub coef: Vec<f64>,
    /// `v(., action, time)` as a vector over states.
    pub principal: Vec<f64>,
}

/// How an [`IndirectUtility`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Exact maximum over linear pieces built from [`Primitives`].
    ActionForm,
    /// Values stored on a finite belief grid; points off the grid evaluate to NaN.
    Tabulated,
}

#[derive(Debug, Clone)]
struct Table {
    beliefs: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Agent and principal indirect utilities `U(mu, t)` and `V(mu, t)`.
///
/// In action-form mode `U(mu, t) = max over (a, s >= t) of u(., a, s) . mu`
/// and `V` is the principal's best payoff among the agent's maximizers
/// (ties within 1e-12, first in `(action, time)` order among equal `V`).
#[derive(Debug, Clone)]
pub struct IndirectUtility {
    mode: Mode,
    n_states: usize,
    times: Vec<f64>,
    pieces: Vec<Piece>,
    table: Option<Table>,
}

/// Builds the action-form indirect utility of a problem.
pub fn build_indirect(prim: &Primitives) -> Result<IndirectUtility> {
    prim.validate()?;
    let n = prim.n_states();
    let mut pieces = Vec::new();
    for a in 0..prim.actions.len() {
        for s in 0..prim.n_times() {
            pieces.push(Piece {
                action: a,
                time: s,
                coef: (0..n).map(|th| prim.u[th][a][s]).collect(),
                principal: (0..n).map(|th| prim.v[th][a][s]).collect(),
            });
        }
    }
    Ok(IndirectUtility { mode: Mode::ActionForm, n_states: n, times: prim.times.clone(), pieces, table: None })
}

impl IndirectUtility {
    /// A tabulated utility: `u[i][k]`, `v[i][k]` are the values at
    /// `beliefs[i]` and grid time `k`.
    pub fn tabulated(
        times: Vec<f64>,
        beliefs: Vec<Vec<f64>>,
        u: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    ) -> Result<IndirectUtility> {
        let n = beliefs.first().map(|b| b.len()).ok_or_else(|| Error::invalid("beliefs", "empty grid"))?;
        if u.len() != beliefs.len() || v.len() != beliefs.len() {
            return Err(Error::invalid("table", "one row per belief expected"));
        }
        if u.iter().chain(v.iter()).any(|row| row.len() != times.len()) {
            return Err(Error::invalid("table", "one column per time expected"));
        }
        Ok(IndirectUtility {
            mode: Mode::Tabulated,
            n_states: n,
            times,
            pieces: Vec::new(),
            table: Some(Table { beliefs, u, v }),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Every piece, active or not.
    pub fn all_pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Pieces available to an agent who stops at grid index `t`: those with `s >= t`.
    pub fn pieces(&self, t: usize) -> impl Iterator<Item = &Piece> {
        self.pieces.iter().filter(move |p| p.time >= t)
    }

    /// Active pieces at `t` with pointwise-dominated and duplicate pieces removed.
    ///
    /// A piece whose coefficients are componentwise no larger than another
    /// active piece never attains the maximum over the simplex alone and
    /// yields a weaker obedience row, so dropping it changes nothing.
    pub fn undominated_pieces(&self, t: usize) -> Vec<&Piece> {
        let active: Vec<&Piece> = self.pieces(t).collect();
        let mut keep = Vec::new();
        'outer: for (i, p) in active.iter().enumerate() {
            for (j, q) in active.iter().enumerate() {
                if i == j {
                    continue;
                }
                let weakly = p.coef.iter().zip(&q.coef).all(|(x, y)| x <= y);
                let equal = p.coef == q.coef;
                if weakly && (!equal || j < i) {
                    continue 'outer;
                }
            }
            keep.push(*p);
        }
        keep
    }

    fn lookup(&self, mu: &[f64]) -> Option<usize> {
        let table = self.table.as_ref()?;
        table.beliefs.iter().position(|b| b.iter().zip(mu).all(|(x, y)| (x - y).abs() <= 1e-12))
    }

    /// `U(mu, t)` at grid index `t`.
    pub fn eval_u(&self, mu: &[f64], t: usize) -> f64 {
        match self.mode {
            Mode::ActionForm => self.pieces(t).map(|p| dot(&p.coef, mu)).fold(f64::NEG_INFINITY, f64::max),
            Mode::Tabulated => match self.lookup(mu) {
                Some(i) => self.table.as_ref().unwrap().u[i][t],
                None => f64::NAN,
            },
        }
    }

    /// `V(mu, t)` at grid index `t`, ties broken in the principal's favour.
    pub fn eval_v(&self, mu: &[f64], t: usize) -> f64 {
        match self.mode {
            Mode::ActionForm => {
                let p = self.agent_choice(mu, t);
                dot(&p.principal, mu)
            }
            Mode::Tabulated => match self.lookup(mu) {
                Some(i) => self.table.as_ref().unwrap().v[i][t],
                None => f64::NAN,
            },
        }
    }

    /// The piece the agent uses after stopping at `(mu, t)`: an agent-optimal
    /// `(a, s)`, principal-best among ties, first in order among equal values.
    ///
    /// Panics in tabulated mode.
    pub fn agent_choice(&self, mu: &[f64], t: usize) -> &Piece {
        assert_eq!(self.mode, Mode::ActionForm, "agent_choice needs action-form primitives");
        let best = self.eval_u(mu, t);
        let scale = 1.0 + best.abs();
        let mut chosen: Option<(&Piece, f64)> = None;
        for p in self.pieces(t) {
            if dot(&p.coef, mu) >= best - 1e-12 * scale {
                let val = dot(&p.principal, mu);
                match chosen {
                    Some((_, v)) if val <= v => {}
                    _ => chosen = Some((p, val)),
                }
            }
        }
        chosen.expect("at least one action").0
    }

    /// Pieces attaining `U(mu, t)` within `tol`.
    pub fn attaining(&self, mu: &[f64], t: usize, tol: f64) -> Vec<&Piece> {
        let best = self.eval_u(mu, t);
        self.pieces(t).filter(|p| dot(&p.coef, mu) >= best - tol).collect()
    }
}

/// Degree-one homogeneous extension: `(sum z) * U(z / sum z, t)`, and 0 at `z = 0`.
///
/// ```
/// use persuade::model::{build_indirect, hd1_eval, Primitives};
/// // two states, match the state to earn 1, waiting costs t
/// let prim = Primitives::from_fn(2, 2, vec![0.0, 1.0], vec![0.5, 0.5],
///     |s, a, t| if s == a { 1.0 - t } else { -t }, |_, _, _| 0.0).unwrap();
/// let u = build_indirect(&prim).unwrap();
/// assert!((hd1_eval(&u, &[0.3, 0.6], 0) - 0.6).abs() < 1e-15);
/// assert_eq!(hd1_eval(&u, &[0.0, 0.0], 0), 0.0);
/// ```
pub fn hd1_eval(util: &IndirectUtility, z: &[f64], t: usize) -> f64 {
    let total: f64 = z.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    match util.mode {
        Mode::ActionForm => util.pieces(t).map(|p| dot(&p.coef, z)).fold(f64::NEG_INFINITY, f64::max),
        Mode::Tabulated => {
            let mu: Vec<f64> = z.iter().map(|x| x / total).collect();
            total * util.eval_u(&mu, t)
        }
    }
}

/// A stopping belief, the grid index of its stopping time, and its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub belief: Vec<f64>,
    pub time: usize,
    pub weight: f64,
}

/// A finite joint distribution of stopping beliefs and stopping times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefTimeDistribution {
    pub times: Vec<f64>,
    pub atoms: Vec<Atom>,
}

impl BeliefTimeDistribution {
    pub fn new(times: Vec<f64>, atoms: Vec<Atom>) -> BeliefTimeDistribution {
        BeliefTimeDistribution { times, atoms }
    }

    /// Everything stops at grid time `t` on the vertices, weighted by the prior.
    pub fn full_revelation(times: Vec<f64>, prior: &[f64], t: usize) -> BeliefTimeDistribution {
        let n = prior.len();
        let atoms = prior
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(s, &w)| Atom { belief: vertex(n, s), time: t, weight: w })
            .collect();
        BeliefTimeDistribution { times, atoms }
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `sum w * mu`, the implied prior.
    pub fn mean_belief(&self) -> Vec<f64> {
        let n = self.atoms.first().map(|a| a.belief.len()).unwrap_or(0);
        let mut m = vec![0.0; n];
        for a in &self.atoms {
            for (x, b) in m.iter_mut().zip(&a.belief) {
                *x += a.weight * b;
            }
        }
        m
    }

    /// Checks weights, simplex membership, grid membership and prior consistency.
    pub fn validate(&self, prior: &[f64], tol: f64) -> Result<()> {
        for a in &self.atoms {
            if a.weight < -tol || !a.weight.is_finite() {
                return Err(Error::invalid("weights", "negative or non-finite weight"));
            }
            if a.time >= self.times.len() {
                return Err(Error::invalid("time", "atom time is off the grid"));
            }
            if a.belief.len() != prior.len() || a.belief.iter().any(|x| *x < -tol) {
                return Err(Error::invalid("belief", "belief is not in the simplex"));
            }
            if (a.belief.iter().sum::<f64>() - 1.0).abs() > tol {
                return Err(Error::invalid("belief", "belief does not sum to one"));
            }
        }
        if (self.total_weight() - 1.0).abs() > tol {
            return Err(Error::invalid("weights", format!("total weight {}", self.total_weight())));
        }
        let m = self.mean_belief();
        if m.iter().zip(prior).any(|(x, p)| (x - p).abs() > tol) {
            return Err(Error::invalid("prior", "mean stopping belief differs from the prior"));
        }
        Ok(())
    }

    /// `E_f[V(mu, tau)]`.
    pub fn expected_v(&self, util: &IndirectUtility) -> f64 {
        self.atoms.iter().map(|a| a.weight * util.eval_v(&a.belief, a.time)).sum()
    }

    /// `E_f[U(mu, tau)]`.
    pub fn expected_u(&self, util: &IndirectUtility) -> f64 {
        self.atoms.iter().map(|a| a.weight * util.eval_u(&a.belief, a.time)).sum()
    }

    /// `P(tau > t)`.
    pub fn survival(&self, t: usize) -> f64 {
        self.atoms.iter().filter(|a| a.time > t).map(|a| a.weight).sum()
    }

    /// Unnormalized continuation mean `sum_{tau > t} w * mu`.
    pub fn tail_mass(&self, t: usize) -> Vec<f64> {
        let n = self.atoms.first().map(|a| a.belief.len()).unwrap_or(0);
        let mut z = vec![0.0; n];
        for a in self.atoms.iter().filter(|a| a.time > t) {
            for (x, b) in z.iter_mut().zip(&a.belief) {
                *x += a.weight * b;
            }
        }
        z
    }

    /// Distinct grid times carrying positive mass, ascending.
    pub fn support_times(&self, tol: f64) -> Vec<usize> {
        let mut ts: Vec<usize> = self.atoms.iter().filter(|a| a.weight > tol).map(|a| a.time).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// Atoms with equal belief and time merged; zero atoms dropped.
    pub fn merged(&self, tol: f64) -> BeliefTimeDistribution {
        let mut out: Vec<Atom> = Vec::new();
        for a in &self.atoms {
            if a.weight <= tol {
                continue;
            }
            match out
                .iter_mut()
                .find(|b| b.time == a.time && b.belief.iter().zip(&a.belief).all(|(x, y)| (x - y).abs() <= 1e-12))
            {
                Some(b) => b.weight += a.weight,
                None => out.push(a.clone()),
            }
        }
        BeliefTimeDistribution { times: self.times.clone(), atoms: out }
    }
}

/// The belief that puts all mass on state `s`.
pub fn vertex(n: usize, s: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[s] = 1.0;
    v
}

/// `E_f[mu | tau > t]`, or `None` once the surviving mass is at most 1e-12.
pub fn continuation_belief(f: &BeliefTimeDistribution, t: usize) -> Option<Vec<f64>> {
    let s = f.survival(t);
    if s <= 1e-12 {
        return None;
    }
    Some(f.tail_mass(t).into_iter().map(|x| x / s).collect())
}

/// Pooled obedience residuals `G(f)(t)` for every non-terminal grid time.
///
/// `G(f)(t) = sum_{tau > t} w U(mu, tau) - U(sum_{tau > t} w mu, t)` with the
/// degree-one extension of `U`; `f` is obedient when every entry is at
/// least `-1e-9`.
pub fn occ_residuals(f: &BeliefTimeDistribution, util: &IndirectUtility) -> Vec<f64> {
    let last = f.times.len().saturating_sub(1);
    (0..last)
        .map(|t| {
            let cont: f64 = f.atoms.iter().filter(|a| a.time > t).map(|a| a.weight * util.eval_u(&a.belief, a.time)).sum();
            cont - hd1_eval(util, &f.tail_mass(t), t)
        })
        .collect()
}

/// A "continue until told to stop" strategy: the continuation belief path,
/// the stopping law at each time, and the survival probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleRecommendation {
    pub times: Vec<f64>,
    /// `E[mu | tau > t]`, absent once nobody continues.
    pub continuation_path: Vec<Option<Vec<f64>>>,
    /// `P(tau = t)`.
    pub stop_mass: Vec<f64>,
    /// Conditional law of the stopping belief given `tau = t`.
    pub stop_kernel: Vec<Vec<(Vec<f64>, f64)>>,
    /// `P(tau > t)`.
    pub survival: Vec<f64>,
}

/// Turns an obedient distribution into its simple recommendation.
///
/// Fails with [`Error::Disobedient`] naming the first time whose residual is
/// below `-1e-9`.
pub fn to_simple_recommendation(f: &BeliefTimeDistribution, util: &IndirectUtility) -> Result<SimpleRecommendation> {
    for (t, r) in occ_residuals(f, util).into_iter().enumerate() {
        if r < -1e-9 {
            return Err(Error::Disobedient { time: f.times[t], residual: r });
        }
    }
    let nt = f.times.len();
    let mut stop_mass = vec![0.0; nt];
    let mut stop_kernel: Vec<Vec<(Vec<f64>, f64)>> = vec![Vec::new(); nt];
    for a in &f.atoms {
        stop_mass[a.time] += a.weight;
    }
    for a in &f.atoms {
        if stop_mass[a.time] > 0.0 {
            stop_kernel[a.time].push((a.belief.clone(), a.weight / stop_mass[a.time]));
        }
    }
    Ok(SimpleRecommendation {
        times: f.times.clone(),
        continuation_path: (0..nt).map(|t| continuation_belief(f, t)).collect(),
        stop_mass,
        stop_kernel,
        survival: (0..nt).map(|t| f.survival(t)).collect(),
    })
}

impl SimpleRecommendation {
    /// The joint law of `(mu_tau, tau)` the recommendation induces.
    pub fn to_distribution(&self) -> BeliefTimeDistribution {
        let mut atoms = Vec::new();
        for (t, kernel) in self.stop_kernel.iter().enumerate() {
            for (b, p) in kernel {
                atoms.push(Atom { belief: b.clone(), time: t, weight: p * self.stop_mass[t] });
            }
        }
        BeliefTimeDistribution { times: self.times.clone(), atoms }
    }

    /// Checks `mu_hat_t P(tau > t) + sum_{s <= t} stopped mass * beliefs = mu0`.
    pub fn martingale_gap(&self, prior: &[f64]) -> f64 {
        let n = prior.len();
        let mut stopped = vec![0.0; n];
        let mut worst: f64 = 0.0;
        for t in 0..self.times.len() {
            for (b, p) in &self.stop_kernel[t] {
                for s in 0..n {
                    stopped[s] += self.stop_mass[t] * p * b[s];
                }
            }
            for s in 0..n {
                let cont = self.continuation_path[t].as_ref().map(|m| m[s] * self.survival[t]).unwrap_or(0.0);
                worst = worst.max((cont + stopped[s] - prior[s]).abs());
            }
        }
        worst
    }
}

/// One replayed path: where it stopped and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub belief: Vec<f64>,
    pub time: usize,
}

/// Replays the recommendation `n` times with a seeded generator.
///
/// At each time the path stops with the conditional hazard
/// `P(tau = t) / P(tau >= t)` and then draws its belief from the stop kernel.
pub fn simulate_paths(rec: &SimpleRecommendation, n: usize, seed: u64) -> Vec<SamplePath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nt = rec.times.len();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut at_risk = 1.0;
        let mut stopped = None;
        for t in 0..nt {
            let m = rec.stop_mass[t];
            if m <= 0.0 {
                continue;
            }
            let hazard = if t + 1 == nt { 1.0 } else { (m / at_risk).min(1.0) };
            if rng.gen::<f64>() < hazard {
                stopped = Some(t);
                break;
            }
            at_risk -= m;
        }
        let t = stopped.unwrap_or_else(|| (0..nt).rev().find(|&t| rec.stop_mass[t] > 0.0).unwrap_or(nt - 1));
        let kernel = &rec.stop_kernel[t];
        let mut u = rng.gen::<f64>();
        let mut belief = kernel.last().map(|k| k.0.clone()).unwrap_or_default();
        for (b, p) in kernel {
            if u < *p {
                belief = b.clone();
                break;
            }
            u -= p;
        }
        out.push(SamplePath { belief, time: t });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matching(times: Vec<f64>, prior: Vec<f64>, cost: f64) -> Primitives {
        Primitives::from_fn(
            2,
            2,
            times,
            prior,
            move |s, a, t| if s == a { 1.0 - cost * t } else { -cost * t },
            |_, a, _| if a == 1 { 1.0 } else { 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn matching_model_values() {
        let prim = matching(vec![0.0, 0.3, 1.0], vec![0.5, 0.5], 1.0);
        let u = build_indirect(&prim).unwrap();
        assert!((u.eval_u(&[0.5, 0.5], 0) - 0.5).abs() < 1e-15);
        assert!((u.eval_u(&[0.2, 0.8], 1) - 0.5).abs() < 1e-15);
        // at the kink the principal's favourite action is chosen
        assert_eq!(u.eval_v(&[0.5, 0.5], 0), 1.0);
        assert_eq!(u.eval_v(&[0.6, 0.4], 0), 0.0);
    }

    #[test]
    fn u_is_nonincreasing_in_time() {
        let prim = matching(vec![0.0, 0.5, 1.0], vec![0.5, 0.5], 1.0);
        let u = build_indirect(&prim).unwrap();
        for k in 0..=10 {
            let mu = [k as f64 / 10.0, 1.0 - k as f64 / 10.0];
            assert!(u.eval_u(&mu, 1) <= u.eval_u(&mu, 0));
            assert!(u.eval_u(&mu, 2) <= u.eval_u(&mu, 1));
        }
    }

    #[test]
    fn undominated_pieces_keep_only_the_earliest_time() {
        let prim = matching(vec![0.0, 0.5, 1.0], vec![0.5, 0.5], 1.0);
        let u = build_indirect(&prim).unwrap();
        let kept = u.undominated_pieces(0);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|p| p.time == 0));
    }

    #[test]
    fn invalid_prior_is_named() {
        let err = Primitives::from_fn(2, 1, vec![0.0, 1.0], vec![0.5, 0.4], |_, _, _| 0.0, |_, _, _| 0.0).unwrap_err();
        assert!(matches!(err, Error::Invalid { ref field, .. } if field == "prior"));
    }

    #[test]
    fn continuation_belief_examples() {
        let times = vec![0.0, 1.0];
        let f = BeliefTimeDistribution::new(
            times.clone(),
            vec![
                Atom { belief: vec![0.0, 1.0], time: 1, weight: 0.4 },
                Atom { belief: vec![2.0 / 3.0, 1.0 / 3.0], time: 1, weight: 0.6 },
            ],
        );
        let m = continuation_belief(&f, 0).unwrap();
        assert!((m[0] - 0.4).abs() < 1e-15 && (m[1] - 0.6).abs() < 1e-15);
        assert!(continuation_belief(&f, 1).is_none());
    }

    #[test]
    fn delayed_full_revelation_residuals() {
        // waiting costs exceed the value of information
        let prim = matching(vec![0.0, 1.0], vec![0.6, 0.4], 1.0);
        let u = build_indirect(&prim).unwrap();
        let f = BeliefTimeDistribution::full_revelation(prim.times.clone(), &prim.prior, 1);
        let r = occ_residuals(&f, &u);
        assert!((r[0] + 0.6).abs() < 1e-12);
        let err = to_simple_recommendation(&f, &u).unwrap_err();
        assert!(matches!(err, Error::Disobedient { time, .. } if time == 0.0));
        // cheaper waiting flips the verdict
        let prim = matching(vec![0.0, 1.0], vec![0.6, 0.4], 0.2);
        let u = build_indirect(&prim).unwrap();
        let r = occ_residuals(&f, &u);
        assert!((r[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn recommendation_round_trip_and_martingale() {
        let prim = matching(vec![0.0, 0.5, 1.0], vec![0.6, 0.4], 0.1);
        let u = build_indirect(&prim).unwrap();
        let f = BeliefTimeDistribution::new(
            prim.times.clone(),
            vec![
                Atom { belief: vec![1.0, 0.0], time: 1, weight: 0.3 },
                Atom { belief: vec![0.0, 1.0], time: 2, weight: 0.4 },
                Atom { belief: vec![1.0, 0.0], time: 2, weight: 0.3 },
            ],
        );
        let rec = to_simple_recommendation(&f, &u).unwrap();
        assert!(rec.martingale_gap(&prim.prior) < 1e-12);
        let back = rec.to_distribution();
        for (a, b) in f.atoms.iter().zip(&back.atoms) {
            assert_eq!(a.belief, b.belief);
            assert!((a.weight - b.weight).abs() < 1e-12);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let prim = matching(vec![0.0, 1.0], vec![0.6, 0.4], 0.1);
        let u = build_indirect(&prim).unwrap();
        let f = BeliefTimeDistribution::full_revelation(prim.times.clone(), &prim.prior, 0);
        let rec = to_simple_recommendation(&f, &u).unwrap();
        assert_eq!(simulate_paths(&rec, 50, 7), simulate_paths(&rec, 50, 7));
    }
}
