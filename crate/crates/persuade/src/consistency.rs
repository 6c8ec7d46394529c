//! Limited commitment: interim surplus, the zero-surplus transformation,
//! the auxiliary-problem check for dynamic consistency, the goalposts
//! application and a two-period unraveling demo.
//!
//! A [`FiniteBeliefProcess`] is a finite Markov process of beliefs on the
//! time grid. Each node carries a belief and is either a stopping leaf or a
//! continuation node whose children live one grid step later. Nodes may have
//! several parents, so histories that share a continuation share the node.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{build_indirect, vertex, Atom, BeliefTimeDistribution, IndirectUtility, Primitives, SimpleRecommendation};
use crate::oracle::{interim_value_w, GridProblem};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessNode {
    /// Grid index of the node's time.
    pub time: usize,
    pub belief: Vec<f64>,
    /// Whether the agent is told to stop here.
    pub stop: bool,
    /// `(child index, transition probability)`.
    pub children: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteBeliefProcess {
    pub times: Vec<f64>,
    pub prior: Vec<f64>,
    /// Transitions out of the prior; these nodes sit at time index 0.
    pub root: Vec<(usize, f64)>,
    pub nodes: Vec<ProcessNode>,
}

impl FiniteBeliefProcess {
    /// The process that follows a simple recommendation: one continuation
    /// node per time, and a stopping leaf per stopping belief.
    pub fn from_recommendation(rec: &SimpleRecommendation, prior: &[f64]) -> FiniteBeliefProcess {
        let nt = rec.times.len();
        let mut nodes = Vec::new();
        let edges_from = |nodes: &mut Vec<ProcessNode>, k: usize, scale: f64| -> Vec<(usize, f64)> {
            let mut out = Vec::new();
            for (b, p) in &rec.stop_kernel[k] {
                let w = rec.stop_mass[k] * p / scale;
                if w > 0.0 {
                    nodes.push(ProcessNode { time: k, belief: b.clone(), stop: true, children: vec![] });
                    out.push((nodes.len() - 1, w));
                }
            }
            out
        };
        let mut root = edges_from(&mut nodes, 0, 1.0);
        let mut parent: Option<usize> = None;
        for k in 0..nt {
            let surv = rec.survival[k];
            let Some(mu) = rec.continuation_path[k].clone() else { break };
            if surv <= 1e-15 || k + 1 == nt {
                break;
            }
            nodes.push(ProcessNode { time: k, belief: mu, stop: false, children: vec![] });
            let id = nodes.len() - 1;
            match parent {
                None => root.push((id, surv)),
                Some(p) => {
                    let prev = rec.survival[k - 1];
                    nodes[p].children.push((id, surv / prev));
                }
            }
            let kids = edges_from(&mut nodes, k + 1, surv);
            nodes[id].children.extend(kids);
            parent = Some(id);
        }
        FiniteBeliefProcess { times: rec.times.clone(), prior: prior.to_vec(), root, nodes }
    }

    /// Checks time ordering, the martingale property (1e-12 by default) and
    /// that probabilities sum to one.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let check = |mu: &[f64], kids: &[(usize, f64)], what: &str| -> Result<()> {
            let total: f64 = kids.iter().map(|k| k.1).sum();
            if (total - 1.0).abs() > tol || kids.iter().any(|k| k.1 < 0.0) {
                return Err(Error::invalid("process", format!("{what}: transition probabilities sum to {total}")));
            }
            for s in 0..mu.len() {
                let avg: f64 = kids.iter().map(|&(c, p)| p * self.nodes[c].belief[s]).sum();
                if (avg - mu[s]).abs() > tol {
                    return Err(Error::invalid("process", format!("{what}: children do not average to the parent")));
                }
            }
            Ok(())
        };
        if self.root.iter().any(|&(c, _)| c >= self.nodes.len() || self.nodes[c].time != 0) {
            return Err(Error::invalid("process", "root transitions must reach time-0 nodes"));
        }
        check(&self.prior, &self.root, "root")?;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.stop {
                if !n.children.is_empty() {
                    return Err(Error::invalid("process", format!("stopping node {i} has children")));
                }
                continue;
            }
            if n.children.is_empty() || n.time + 1 >= self.times.len() {
                return Err(Error::invalid("process", format!("continuation node {i} has nowhere to go")));
            }
            if n.children.iter().any(|&(c, _)| c >= self.nodes.len() || self.nodes[c].time != n.time + 1) {
                return Err(Error::invalid("process", format!("node {i} has a child off the next grid time")));
            }
            check(&n.belief, &n.children, &format!("node {i}"))?;
        }
        Ok(())
    }

    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.nodes.len()).collect();
        idx.sort_by_key(|&i| self.nodes[i].time);
        idx
    }

    /// Probability of passing through each node.
    pub fn reach(&self) -> Vec<f64> {
        let mut reach = vec![0.0; self.nodes.len()];
        for &(c, p) in &self.root {
            reach[c] += p;
        }
        for i in self.order() {
            let r = reach[i];
            for &(c, p) in &self.nodes[i].children {
                reach[c] += r * p;
            }
        }
        reach
    }

    /// Expected leaf value from each node, given `leaf(belief, time)`.
    pub fn backward_values(&self, leaf: impl Fn(&[f64], usize) -> f64) -> Vec<f64> {
        let mut val = vec![0.0; self.nodes.len()];
        for &i in self.order().iter().rev() {
            let n = &self.nodes[i];
            val[i] = if n.stop { leaf(&n.belief, n.time) } else { n.children.iter().map(|&(c, p)| p * val[c]).sum() };
        }
        val
    }

    /// The joint law of the stopping belief and stopping time.
    pub fn outcome_law(&self) -> BeliefTimeDistribution {
        let reach = self.reach();
        let atoms = self
            .nodes
            .iter()
            .zip(&reach)
            .filter(|(n, r)| n.stop && **r > 0.0)
            .map(|(n, r)| Atom { belief: n.belief.clone(), time: n.time, weight: *r })
            .collect();
        BeliefTimeDistribution::new(self.times.clone(), atoms).merged(1e-12)
    }

    /// Drops nodes that cannot be reached and renumbers the rest.
    fn compact(&mut self) {
        let mut live = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = self.root.iter().map(|e| e.0).collect();
        while let Some(i) = stack.pop() {
            if !live[i] {
                live[i] = true;
                stack.extend(self.nodes[i].children.iter().map(|e| e.0));
            }
        }
        let mut map = vec![usize::MAX; self.nodes.len()];
        let mut kept = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if live[i] {
                map[i] = kept.len();
                kept.push(n.clone());
            }
        }
        for n in &mut kept {
            n.children.iter_mut().for_each(|e| e.0 = map[e.0]);
        }
        self.root.iter_mut().for_each(|e| e.0 = map[e.0]);
        self.nodes = kept;
    }
}

/// Largest difference in atom weights between two outcome laws, matching
/// atoms by time and belief (to 1e-9).
pub fn law_distance(a: &BeliefTimeDistribution, b: &BeliefTimeDistribution) -> f64 {
    let key = |x: &Atom| (x.time, x.belief.iter().map(|v| (v * 1e9).round() as i64).collect::<Vec<_>>());
    let mut diff: HashMap<(usize, Vec<i64>), f64> = HashMap::new();
    for x in &a.atoms {
        *diff.entry(key(x)).or_default() += x.weight;
    }
    for x in &b.atoms {
        *diff.entry(key(x)).or_default() -= x.weight;
    }
    diff.values().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusReport {
    /// Continuation value minus stopping value, zero at stopping nodes.
    pub surplus: Vec<f64>,
    pub max_surplus: f64,
    pub min_surplus: f64,
    pub worst_node: Option<usize>,
    pub zero_surplus: bool,
}

/// The agent's surplus from continuing at every node.
pub fn interim_surplus(proc: &FiniteBeliefProcess, util: &IndirectUtility, tol: f64) -> SurplusReport {
    let cont = proc.backward_values(|mu, t| util.eval_u(mu, t));
    let surplus: Vec<f64> = proc
        .nodes
        .iter()
        .zip(&cont)
        .map(|(n, c)| if n.stop { 0.0 } else { c - util.eval_u(&n.belief, n.time) })
        .collect();
    let mut worst = None;
    let mut max = 0.0;
    for (i, s) in surplus.iter().enumerate() {
        if *s > max {
            max = *s;
            worst = Some(i);
        }
    }
    let min = surplus.iter().copied().fold(0.0, f64::min);
    SurplusReport { max_surplus: max, min_surplus: min, worst_node: worst, zero_surplus: max <= tol, surplus }
}

/// Interim beliefs and mixing weights chosen for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub time: usize,
    pub belief: Vec<f64>,
    /// One `lambda` per child, in the node's child order.
    pub lambdas: Vec<f64>,
}

/// Removes the agent's interim surplus without changing the law of
/// `(mu_tau, tau)`.
///
/// Working backward from the last period, a node with belief `mu` and
/// strict surplus whose children are `mu_j` with probabilities `p_j` is
/// replaced by interim beliefs `lambda_i mu_i + (1 - lambda_i) mu`, each
/// moving to `mu_j` with probability `(1 - lambda_i) p_j + 1{i = j} lambda_i`,
/// where `lambda_i` makes the agent indifferent. The interim beliefs are
/// reached with probabilities proportional to `p_i / lambda_i`.
pub fn make_zero_surplus(
    proc: &FiniteBeliefProcess,
    util: &IndirectUtility,
    tol: f64,
) -> Result<(FiniteBeliefProcess, Vec<SplitRecord>)> {
    proc.validate(1e-9)?;
    let mut out = proc.clone();
    let mut records = Vec::new();
    let last = proc.times.len().saturating_sub(1);
    for t in (0..last).rev() {
        let cont = out.backward_values(|mu, s| util.eval_u(mu, s));
        let mut todo: Vec<(usize, f64)> = out
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.stop && n.time == t)
            .map(|(i, n)| (i, cont[i] - util.eval_u(&n.belief, t)))
            .collect();
        todo.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (id, surplus) in todo {
            if surplus < -tol {
                return Err(Error::Disobedient { time: proc.times[t], residual: surplus });
            }
            if surplus <= tol {
                continue;
            }
            let node = out.nodes[id].clone();
            let mu = &node.belief;
            let cbar = cont[id];
            let mut lambdas = Vec::with_capacity(node.children.len());
            for &(c, _) in &node.children {
                let ci = cont[c];
                let mu_i = &out.nodes[c].belief;
                let gap = |l: f64| {
                    let m: Vec<f64> = mu_i.iter().zip(mu).map(|(a, b)| l * a + (1.0 - l) * b).collect();
                    l * ci + (1.0 - l) * cbar - util.eval_u(&m, t)
                };
                let at_one = gap(1.0);
                let lambda = if at_one.abs() <= 1e-12 {
                    1.0
                } else if at_one > 0.0 {
                    return Err(Error::NoConvergence {
                        what: "zero-surplus split".into(),
                        detail: format!("no indifference weight in (0, 1] at time {} (gap {at_one:e} at 1)", proc.times[t]),
                    });
                } else {
                    let (mut lo, mut hi) = (0.0, 1.0);
                    while hi - lo > 1e-15 {
                        let mid = 0.5 * (lo + hi);
                        if gap(mid) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    hi
                };
                lambdas.push(lambda);
            }
            let norm: f64 = node.children.iter().zip(&lambdas).map(|(e, l)| e.1 / l).sum();
            let mut fresh = Vec::new();
            for (i, (&(c, p), &l)) in node.children.iter().zip(&lambdas).enumerate() {
                let mu_i = &out.nodes[c].belief;
                let belief: Vec<f64> = mu_i.iter().zip(mu).map(|(a, b)| l * a + (1.0 - l) * b).collect();
                let children: Vec<(usize, f64)> = node
                    .children
                    .iter()
                    .enumerate()
                    .map(|(j, &(cj, pj))| (cj, (1.0 - l) * pj + if i == j { l } else { 0.0 }))
                    .filter(|e| e.1 > 0.0)
                    .collect();
                out.nodes.push(ProcessNode { time: t, belief, stop: false, children });
                fresh.push((out.nodes.len() - 1, p / l / norm));
            }
            // Re-point every edge into the old node at the interim nodes.
            let redirect = |edges: &mut Vec<(usize, f64)>| {
                if let Some(pos) = edges.iter().position(|e| e.0 == id) {
                    let (_, q) = edges.remove(pos);
                    edges.extend(fresh.iter().map(|&(f, w)| (f, q * w)));
                }
            };
            redirect(&mut out.root);
            for n in out.nodes.iter_mut() {
                redirect(&mut n.children);
            }
            records.push(SplitRecord { time: t, belief: mu.clone(), lambdas });
        }
    }
    out.compact();
    Ok((out, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dc1Verdict {
    Pass,
    Fail,
    /// The inequality holds, but some mass stops at the last grid time, where
    /// the converse of the equivalence is not established.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dc1Report {
    pub verdict: Dc1Verdict,
    /// `E[V | node] - W(node)` at every continuation node.
    pub gaps: Vec<(usize, f64)>,
    pub worst_node: Option<usize>,
    pub worst_gap: f64,
    pub boundary_supported: bool,
    /// `V(mu, t)` is nondecreasing in `t` at every node belief.
    pub v_monotone: bool,
}

/// Compares the principal's continuation value at every interim node with
/// the value `W` of re-optimising from that node.
pub fn verify_dc1(proc: &FiniteBeliefProcess, gp: &GridProblem, tol: f64) -> Result<Dc1Report> {
    let util = build_indirect(&gp.prim)?;
    let ev = proc.backward_values(|mu, t| util.eval_v(mu, t));
    let reach = proc.reach();
    let interim: Vec<usize> =
        (0..proc.nodes.len()).filter(|&i| !proc.nodes[i].stop && reach[i] > 0.0).collect();
    // Identical (time, belief) queries share one program.
    let key = |i: usize| {
        let n = &proc.nodes[i];
        (n.time, n.belief.iter().map(|v| (v * 1e12).round() as i64).collect::<Vec<_>>())
    };
    let mut unique: Vec<usize> = Vec::new();
    let mut seen = HashMap::new();
    for &i in &interim {
        seen.entry(key(i)).or_insert_with(|| {
            unique.push(i);
            unique.len() - 1
        });
    }
    let values: Vec<f64> = unique
        .par_iter()
        .map(|&i| interim_value_w(gp, &proc.nodes[i].belief, proc.nodes[i].time))
        .collect::<Result<Vec<f64>>>()?;
    let gaps: Vec<(usize, f64)> = interim.iter().map(|&i| (i, ev[i] - values[seen[&key(i)]])).collect();
    let (mut worst_node, mut worst_gap) = (None, f64::INFINITY);
    for &(i, g) in &gaps {
        if g < worst_gap {
            worst_gap = g;
            worst_node = Some(i);
        }
    }
    let last = proc.times.len() - 1;
    let boundary_supported = proc.nodes.iter().zip(&reach).any(|(n, r)| n.stop && n.time == last && *r > 0.0);
    let v_monotone = proc.nodes.iter().all(|n| {
        (n.time..last).all(|t| util.eval_v(&n.belief, t + 1) >= util.eval_v(&n.belief, t) - 1e-12)
    });
    let holds = worst_gap >= -tol;
    let verdict = match (holds, boundary_supported) {
        (false, _) => Dc1Verdict::Fail,
        (true, true) => Dc1Verdict::Inconclusive,
        (true, false) => Dc1Verdict::Pass,
    };
    Ok(Dc1Report { verdict, gaps, worst_node, worst_gap: if interim.is_empty() { 0.0 } else { worst_gap }, boundary_supported, v_monotone })
}

/// Parameters of the task-difficulty model. States are `[x_l, x_h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalpostsSpec {
    pub x_l: f64,
    pub x_h: f64,
    /// Reward on completion.
    pub reward: f64,
    /// Flow cost of effort.
    pub cost: f64,
    /// Agent discount rate.
    pub r: f64,
    /// Principal discount rate.
    pub r_p: f64,
    /// `[P(x_l), P(x_h)]`.
    pub prior: [f64; 2],
}

impl GoalpostsSpec {
    pub fn reference() -> GoalpostsSpec {
        GoalpostsSpec { x_l: 1.0, x_h: 2.0, reward: 2.5, cost: 1.0, r: 1.0, r_p: 0.8, prior: [0.2, 0.8] }
    }

    /// The longest remaining effort the agent accepts for a sure reward.
    pub fn tau_bar(&self) -> f64 {
        ((self.reward + self.cost) / self.cost).ln() / self.r
    }

    pub fn mu_bar(&self) -> f64 {
        let d = (-self.r * self.x_l).exp();
        self.cost / self.reward * (1.0 - d) / d
    }

    pub fn t_star(&self) -> f64 {
        self.x_h - self.tau_bar()
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.reward, self.cost, self.r, self.r_p];
        if pos.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::invalid("goalposts", "reward, cost and both rates must be positive"));
        }
        if !(0.0 < self.x_l && self.x_l < self.x_h) {
            return Err(Error::invalid("goalposts", "need 0 < x_l < x_h"));
        }
        let [a, b] = self.prior;
        if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("prior", "must be a probability vector of length 2"));
        }
        if self.x_h - self.x_l > self.tau_bar() {
            return Err(Error::invalid("goalposts", format!("x_h - x_l = {} exceeds tau_bar = {}", self.x_h - self.x_l, self.tau_bar())));
        }
        if self.t_star() < 0.0 {
            return Err(Error::invalid("goalposts", "t* = x_h - tau_bar is negative"));
        }
        if b <= self.mu_bar() {
            return Err(Error::invalid("prior", format!("prior(x_h) = {b} must exceed mu_bar = {}", self.mu_bar())));
        }
        Ok(())
    }

    /// Agent payoff from working until `s`.
    fn agent(&self, x: f64, s: f64) -> f64 {
        let d = (-self.r * s).exp();
        (if s >= x - 1e-12 { d * self.reward } else { 0.0 }) - self.cost * (1.0 - d)
    }

    /// Grid `{k dt} ∪ {0, t*, x_l, x_h}` on `[0, x_h]`.
    pub fn grid(&self, dt: f64) -> Result<Vec<f64>> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let mut times: Vec<f64> = (0..).map(|k| k as f64 * dt).take_while(|t| *t <= self.x_h + 1e-12).collect();
        times.extend([self.t_star(), self.x_l, self.x_h]);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        Ok(times)
    }

    /// Action-form primitives. Actions are target effort times
    /// `stop`, `x_l`, `x_h`; a target already passed means stopping now.
    pub fn primitives(&self, times: Vec<f64>) -> Result<Primitives> {
        let targets = [0.0, self.x_l, self.x_h];
        let xs = [self.x_l, self.x_h];
        let mut prim = Primitives::from_fn(
            2,
            3,
            times,
            self.prior.to_vec(),
            |s, a, t| self.agent(xs[s], targets[a].max(t)),
            |_, a, t| 1.0 - (-self.r_p * targets[a].max(t)).exp(),
        )?;
        prim.states = vec!["x_l".into(), "x_h".into()];
        prim.actions = vec!["stop".into(), "work_to_x_l".into(), "work_to_x_h".into()];
        Ok(prim)
    }
}

/// Closed-form quantities of the goalposts model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalpostsClosedForm {
    pub tau_bar: f64,
    pub t_star: f64,
    pub mu_bar: f64,
    /// `(prior(x_h) - mu_bar) / (1 - mu_bar)`.
    pub reveal_mass_mu_bar: f64,
    /// Largest hard-task belief at which the agent starts working when the
    /// state is revealed at `t*`.
    pub start_belief: f64,
    /// `(prior(x_h) - start_belief) / (1 - start_belief)`, the time-0 mass
    /// on revealing `x_h` in the constructed strategies.
    pub reveal_mass: f64,
}

pub struct Goalposts {
    pub closed_form: GoalpostsClosedForm,
    pub primitives: Primitives,
    pub t_star_index: usize,
    pub teleport: FiniteBeliefProcess,
    pub inch: FiniteBeliefProcess,
    pub splits: Vec<SplitRecord>,
}

/// Builds the teleporting strategy (an initial split, silence, then full
/// revelation at `t*`) and the inching strategy obtained from it by
/// [`make_zero_surplus`].
pub fn goalposts_strategies(spec: &GoalpostsSpec, dt: f64) -> Result<Goalposts> {
    spec.validate()?;
    let times = spec.grid(dt)?;
    let prim = spec.primitives(times.clone())?;
    let util = build_indirect(&prim)?;
    let t_star = spec.t_star();
    let ks = times.iter().position(|t| (t - t_star).abs() < 1e-9).expect("t* is on the grid");
    if ks == 0 {
        return Err(Error::Refused("t* = 0 leaves no room to move the goalposts".into()));
    }
    let easy = util.eval_u(&vertex(2, 0), ks);
    let hard = util.eval_u(&vertex(2, 1), ks);
    let start = easy / (easy - hard);
    let mu0 = spec.prior[1];
    let q = (mu0 - start) / (1.0 - start);
    let closed_form = GoalpostsClosedForm {
        tau_bar: spec.tau_bar(),
        t_star,
        mu_bar: spec.mu_bar(),
        reveal_mass_mu_bar: (mu0 - spec.mu_bar()) / (1.0 - spec.mu_bar()),
        start_belief: start,
        reveal_mass: q,
    };
    let belief = |m: f64| vec![1.0 - m, m];
    let mut nodes = vec![ProcessNode { time: 0, belief: vertex(2, 1), stop: true, children: vec![] }];
    let root = vec![(0, q), (1, 1.0 - q)];
    for k in 0..ks {
        let next = nodes.len() + 1;
        let children = if k + 1 < ks { vec![(next, 1.0)] } else { vec![(next, 1.0 - start), (next + 1, start)] };
        nodes.push(ProcessNode { time: k, belief: belief(start), stop: false, children });
    }
    nodes.push(ProcessNode { time: ks, belief: vertex(2, 0), stop: true, children: vec![] });
    nodes.push(ProcessNode { time: ks, belief: vertex(2, 1), stop: true, children: vec![] });
    let teleport = FiniteBeliefProcess { times, prior: spec.prior.to_vec(), root, nodes };
    teleport.validate(1e-12)?;
    let (inch, splits) = make_zero_surplus(&teleport, &util, 1e-12)?;
    Ok(Goalposts { closed_form, primitives: prim, t_star_index: ks, teleport, inch, splits })
}

/// One time step of a goalposts path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalpostRow {
    pub time: f64,
    /// `E[x]` among paths that have not yet learned the state.
    pub expected_x: Option<f64>,
    /// Probability that `x_l` is first revealed at this time.
    pub reveal_low: f64,
    /// Probability that `x_h` is first revealed at this time.
    pub reveal_high: f64,
}

pub fn goalpost_path(proc: &FiniteBeliefProcess, x_l: f64, x_h: f64) -> Vec<GoalpostRow> {
    let reach = proc.reach();
    let degenerate = |b: &[f64]| b.iter().any(|p| *p >= 1.0 - 1e-12);
    let mut rows: Vec<GoalpostRow> = proc
        .times
        .iter()
        .map(|&time| GoalpostRow { time, expected_x: None, reveal_low: 0.0, reveal_high: 0.0 })
        .collect();
    let mut flow = |from_open: bool, c: usize, mass: f64| {
        let n = &proc.nodes[c];
        if from_open && degenerate(&n.belief) {
            if n.belief[0] > 0.5 {
                rows[n.time].reveal_low += mass;
            } else {
                rows[n.time].reveal_high += mass;
            }
        }
    };
    for &(c, p) in &proc.root {
        flow(!degenerate(&proc.prior), c, p);
    }
    for (i, n) in proc.nodes.iter().enumerate() {
        for &(c, p) in &n.children {
            flow(!degenerate(&n.belief), c, reach[i] * p);
        }
    }
    for k in 0..proc.times.len() {
        let (mut mass, mut ex) = (0.0, 0.0);
        for (n, r) in proc.nodes.iter().zip(&reach) {
            if n.time == k && !degenerate(&n.belief) {
                mass += r;
                ex += r * (n.belief[0] * x_l + n.belief[1] * x_h);
            }
        }
        if mass > 1e-15 {
            rows[k].expected_x = Some(ex / mass);
        }
    }
    rows
}

/// A two-period experiment-selection game with two states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoaseSpec {
    pub primitives: Primitives,
    /// Number of points on the belief grid for `P(state 1)`.
    pub grid: usize,
}

impl CoaseSpec {
    /// Two periods, two states; the agent is paid for matching the state
    /// and the principal earns `(3 - t)` per match.
    pub fn canonical() -> CoaseSpec {
        let prim = Primitives::from_fn(
            2,
            2,
            vec![1.0, 2.0],
            vec![0.6, 0.4],
            |s, a, _| if s == a { 1.0 } else { 0.0 },
            |s, a, t| if s == a { 3.0 - t } else { 0.0 },
        )
        .expect("canonical spec is valid");
        CoaseSpec { primitives: prim, grid: 41 }
    }

    /// Same, with a principal who gains from delay.
    pub fn patient() -> CoaseSpec {
        let mut spec = CoaseSpec::canonical();
        spec.primitives = Primitives::from_fn(
            2,
            2,
            vec![1.0, 2.0],
            vec![0.6, 0.4],
            |s, a, _| if s == a { 1.0 } else { 0.0 },
            |s, a, t| if s == a { t } else { 0.0 },
        )
        .expect("valid");
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoaseBranch {
    /// `P(state 1)` after the first experiment.
    pub belief: f64,
    pub prob: f64,
    pub agent_stops: bool,
    pub stop_value: f64,
    pub continue_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoaseResult {
    pub first_period: Vec<CoaseBranch>,
    pub principal_value: f64,
    pub full_revelation_at_first: bool,
    /// Largest gain from any one-shot deviation, by either player, at any
    /// grid history.
    pub max_deviation_gain: f64,
    /// `(belief, continue value - stop value)` for the agent at interior
    /// first-period beliefs.
    pub agent_continuation_premium: Vec<(f64, f64)>,
}

/// Best split of `mu` onto the grid for payoff `y`: `(value, lo, hi, weight on hi)`.
fn best_split(xs: &[f64], y: &[f64], mu: f64) -> (f64, usize, usize, f64) {
    let mut best = (f64::NEG_INFINITY, 0, 0, 0.0);
    for i in 0..xs.len() {
        if xs[i] > mu + 1e-12 {
            break;
        }
        for j in i..xs.len() {
            if xs[j] < mu - 1e-12 {
                continue;
            }
            let w = if xs[j] - xs[i] > 1e-15 { (mu - xs[i]) / (xs[j] - xs[i]) } else { 0.0 };
            let v = (1.0 - w) * y[i] + w * y[j];
            if v > best.0 + 1e-12 {
                best = (v, i, j, w);
            }
        }
    }
    best
}

/// Principal-preferred equilibrium of the two-period game by backward
/// induction over experiments that split onto the belief grid.
///
/// Refuses unless the agent's payoff at each state is constant in time,
/// the principal's is strictly decreasing, and at the last period the
/// principal strictly prefers revealing the state at every interior grid
/// belief.
pub fn coase_demo(spec: &CoaseSpec) -> Result<CoaseResult> {
    let prim = &spec.primitives;
    if prim.n_states() != 2 || prim.n_times() != 2 {
        return Err(Error::invalid("coase", "the demo needs two states and two periods"));
    }
    if spec.grid < 3 {
        return Err(Error::invalid("grid", "need at least three grid beliefs"));
    }
    let util = build_indirect(prim)?;
    let b = |m: f64| vec![1.0 - m, m];
    for s in 0..2 {
        let e = vertex(2, s);
        if (util.eval_u(&e, 0) - util.eval_u(&e, 1)).abs() > 1e-12 {
            return Err(Error::Refused(format!("agent payoff at state {s} changes over time")));
        }
        if util.eval_v(&e, 1) >= util.eval_v(&e, 0) {
            return Err(Error::Refused(format!("principal payoff at state {s} does not fall over time")));
        }
    }
    let mut xs: Vec<f64> = (0..spec.grid).map(|k| k as f64 / (spec.grid - 1) as f64).collect();
    let mu0 = prim.prior[1];
    if !xs.iter().any(|x| (x - mu0).abs() < 1e-12) {
        xs.push(mu0);
        xs.sort_by(f64::total_cmp);
    }
    let reveal_v = |m: f64| (1.0 - m) * util.eval_v(&vertex(2, 0), 1) + m * util.eval_v(&vertex(2, 1), 1);
    for &m in &xs[1..xs.len() - 1] {
        if reveal_v(m) <= util.eval_v(&b(m), 1) {
            return Err(Error::Refused(format!("no strict preference for final revelation at belief {m}")));
        }
    }
    // Last period: the agent acts on whatever he learns.
    let v2: Vec<f64> = xs.iter().map(|&m| util.eval_v(&b(m), 1)).collect();
    let u2: Vec<f64> = xs.iter().map(|&m| util.eval_u(&b(m), 1)).collect();
    let mut p2 = Vec::new();
    let mut a2 = Vec::new();
    let mut max_gain: f64 = 0.0;
    for &m in &xs {
        let (val, i, j, w) = best_split(&xs, &v2, m);
        p2.push(val);
        a2.push((1.0 - w) * u2[i] + w * u2[j]);
    }
    // First period: stop or wait, ties to the principal's liking.
    let mut stops = Vec::new();
    let mut pay1 = Vec::new();
    for (k, &m) in xs.iter().enumerate() {
        let (us, vs) = (util.eval_u(&b(m), 0), util.eval_v(&b(m), 0));
        let stop = if (us - a2[k]).abs() <= 1e-12 { vs >= p2[k] } else { us > a2[k] };
        stops.push(stop);
        pay1.push(if stop { vs } else { p2[k] });
        max_gain = max_gain.max(if stop { a2[k] - us } else { us - a2[k] });
    }
    let (value, i, j, w) = best_split(&xs, &pay1, mu0);
    // Principal deviations: every grid split in either period.
    for (k, &m) in xs.iter().enumerate() {
        max_gain = max_gain.max(best_split(&xs, &v2, m).0 - p2[k]);
    }
    max_gain = max_gain.max(best_split(&xs, &pay1, mu0).0 - value);
    let branch = |k: usize, prob: f64| CoaseBranch {
        belief: xs[k],
        prob,
        agent_stops: stops[k],
        stop_value: util.eval_u(&b(xs[k]), 0),
        continue_value: a2[k],
    };
    let mut first = vec![branch(i, 1.0 - w)];
    if j != i {
        first.push(branch(j, w));
    }
    first.retain(|br| br.prob > 0.0);
    let full = first.iter().all(|br| (br.belief == 0.0 || br.belief == 1.0) && br.agent_stops);
    let premium = (1..xs.len() - 1).map(|k| (xs[k], a2[k] - util.eval_u(&b(xs[k]), 0))).collect();
    Ok(CoaseResult {
        first_period: first,
        principal_value: value,
        full_revelation_at_first: full,
        max_deviation_gain: max_gain.max(0.0),
        agent_continuation_premium: premium,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::to_simple_recommendation;
    use approx::assert_abs_diff_eq;

    fn match_model() -> (Primitives, IndirectUtility) {
        let prim = Primitives::from_fn(
            2,
            2,
            vec![0.0, 0.1],
            vec![0.6, 0.4],
            |s, a, t| if s == a { 1.0 - t } else { -t },
            |_, a, _| a as f64,
        )
        .unwrap();
        let util = build_indirect(&prim).unwrap();
        (prim, util)
    }

    /// Belief 0.4 at time 0 splitting into {0, 0.8} at time 0.1.
    fn split_process() -> FiniteBeliefProcess {
        let b = |m: f64| vec![1.0 - m, m];
        FiniteBeliefProcess {
            times: vec![0.0, 0.1],
            prior: b(0.4),
            root: vec![(0, 1.0)],
            nodes: vec![
                ProcessNode { time: 0, belief: b(0.4), stop: false, children: vec![(1, 0.5), (2, 0.5)] },
                ProcessNode { time: 1, belief: b(0.0), stop: true, children: vec![] },
                ProcessNode { time: 1, belief: b(0.8), stop: true, children: vec![] },
            ],
        }
    }

    #[test]
    fn split_weights_match_hand_solution() {
        let (_, util) = match_model();
        let proc = split_process();
        let rep = interim_surplus(&proc, &util, 1e-9);
        assert!(rep.max_surplus > 0.1);
        let (out, records) = make_zero_surplus(&proc, &util, 1e-12).unwrap();
        assert_abs_diff_eq!(records[0].lambdas[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(records[0].lambdas[1], 0.8, epsilon = 1e-12);
        let mut interim: Vec<f64> = out.nodes.iter().filter(|n| !n.stop).map(|n| n.belief[1]).collect();
        interim.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(interim[0], 0.4 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(interim[1], 0.72, epsilon = 1e-12);
        out.validate(1e-12).unwrap();
        assert!(interim_surplus(&out, &util, 1e-9).zero_surplus);
        assert!(law_distance(&proc.outcome_law(), &out.outcome_law()) < 1e-12);
    }

    #[test]
    fn zero_surplus_process_is_a_fixed_point() {
        let (prim, util) = match_model();
        let proc = FiniteBeliefProcess {
            times: prim.times.clone(),
            prior: prim.prior.clone(),
            root: vec![(0, 0.6), (1, 0.4)],
            nodes: vec![
                ProcessNode { time: 0, belief: vec![1.0, 0.0], stop: true, children: vec![] },
                ProcessNode { time: 0, belief: vec![0.0, 1.0], stop: true, children: vec![] },
            ],
        };
        let rep = interim_surplus(&proc, &util, 1e-12);
        assert!(rep.zero_surplus && rep.max_surplus == 0.0);
        let (out, records) = make_zero_surplus(&proc, &util, 1e-12).unwrap();
        assert_eq!(out, proc);
        assert!(records.is_empty());
    }

    #[test]
    fn recommendation_round_trip() {
        let (prim, util) = match_model();
        let f = BeliefTimeDistribution::new(
            prim.times.clone(),
            vec![
                Atom { belief: vec![1.0, 0.0], time: 1, weight: 1.0 / 3.0 },
                Atom { belief: vec![0.4, 0.6], time: 1, weight: 2.0 / 3.0 },
            ],
        );
        let rec = to_simple_recommendation(&f, &util).unwrap();
        let proc = FiniteBeliefProcess::from_recommendation(&rec, &prim.prior);
        proc.validate(1e-12).unwrap();
        assert!(law_distance(&proc.outcome_law(), &f) < 1e-12);
    }

    #[test]
    fn broken_martingale_rejected() {
        let mut proc = split_process();
        proc.nodes[0].children[0].1 = 0.4;
        proc.nodes[0].children[1].1 = 0.6;
        assert!(proc.validate(1e-12).is_err());
    }

    #[test]
    fn goalposts_closed_forms() {
        let spec = GoalpostsSpec::reference();
        let g = goalposts_strategies(&spec, 0.05).unwrap();
        let cf = &g.closed_form;
        assert_abs_diff_eq!(cf.tau_bar, 3.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cf.t_star, 2.0 - 3.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cf.mu_bar, (std::f64::consts::E - 1.0) / 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cf.reveal_mass_mu_bar, (0.8 - cf.mu_bar) / (1.0 - cf.mu_bar), epsilon = 1e-15);
        assert_abs_diff_eq!(cf.reveal_mass_mu_bar, 0.36038, epsilon = 1e-5);
        assert!(cf.start_belief < cf.mu_bar);
        let util = build_indirect(&g.primitives).unwrap();
        assert!(!interim_surplus(&g.teleport, &util, 1e-9).zero_surplus);
        assert!(interim_surplus(&g.inch, &util, 1e-9).zero_surplus);
        assert!(law_distance(&g.teleport.outcome_law(), &g.inch.outcome_law()) < 1e-9);
        let path = goalpost_path(&g.inch, spec.x_l, spec.x_h);
        let xs: Vec<f64> = path.iter().filter_map(|r| r.expected_x).collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{xs:?}");
        let low: f64 = path.iter().map(|r| r.reveal_low).sum();
        assert_abs_diff_eq!(low, spec.prior[0], epsilon = 1e-9);
    }

    #[test]
    fn goalposts_parameter_violation_named() {
        let mut spec = GoalpostsSpec::reference();
        spec.prior = [0.5, 0.5];
        let err = goalposts_strategies(&spec, 0.05).err().unwrap().to_string();
        assert!(err.contains("mu_bar"), "{err}");
    }

    #[test]
    fn coase_unravels() {
        let res = coase_demo(&CoaseSpec::canonical()).unwrap();
        assert!(res.full_revelation_at_first, "{res:?}");
        assert_abs_diff_eq!(res.principal_value, 2.0, epsilon = 1e-12);
        assert!(res.max_deviation_gain <= 1e-9);
        assert!(res.agent_continuation_premium.iter().all(|(_, g)| *g > 0.0));
        assert!(matches!(coase_demo(&CoaseSpec::patient()), Err(Error::Refused(_))));
    }
}
