//! Exact solutions of the relaxed problem on finite grids.
//!
//! The decision variable is a weight `f[i][k] >= 0` on every pair of a grid
//! belief `mu_i` and a grid time `t_k`. The program maximizes `E_f[V]`
//! subject to total mass one, mean belief equal to the prior, and, for every
//! non-terminal time `t_j` and every linear piece `p` of `U(., t_j)`,
//!
//! ```text
//! sum_{k > j} sum_i f[i][k] * (U(mu_i, t_k) - u_p . mu_i) >= 0
//! ```
//!
//! which is the pooled obedience constraint written piece by piece.

pub mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    build_indirect, occ_residuals, vertex, Atom, BeliefTimeDistribution, IndirectUtility, Mode, Primitives,
};
use crate::numeric::dot;
use simplex::{LinearProgram, LpStatus, RowKind, SimplexOptions};

/// A problem together with the finite belief grid the oracle optimizes over.
#[derive(Debug, Clone)]
pub struct GridProblem {
    pub prim: Primitives,
    pub util: IndirectUtility,
    pub beliefs: Vec<Vec<f64>>,
    /// `U(beliefs[i], times[k])`.
    pub u_tab: Vec<Vec<f64>>,
    /// `V(beliefs[i], times[k])`.
    pub v_tab: Vec<Vec<f64>>,
}

/// The lattice `{k / d : k in N^n, sum k = d}` on the simplex with `n` vertices.
pub fn simplex_lattice(n: usize, d: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == n {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / d as f64).collect());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(n, left - k, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n == 1 {
        return vec![vec![1.0]];
    }
    rec(n, d, d.max(1), &mut Vec::new(), &mut out);
    out
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn same_belief(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

impl GridProblem {
    /// Tabulates `U` and `V` on `beliefs`, adding the vertices and the prior
    /// when missing and dropping duplicates.
    pub fn new(prim: Primitives, beliefs: Vec<Vec<f64>>) -> Result<GridProblem> {
        let util = build_indirect(&prim)?;
        let n = prim.n_states();
        let mut grid: Vec<Vec<f64>> = Vec::new();
        let candidates = (0..n).map(|s| vertex(n, s)).chain(std::iter::once(prim.prior.clone())).chain(beliefs);
        for b in candidates {
            if b.len() != n || b.iter().any(|x| *x < -1e-12) || (b.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("belief_grid", "every grid point must lie in the simplex"));
            }
            if !grid.iter().any(|g| same_belief(g, &b)) {
                grid.push(b);
            }
        }
        let nt = prim.n_times();
        let u_tab = grid.iter().map(|b| (0..nt).map(|k| util.eval_u(b, k)).collect()).collect();
        let v_tab = grid.iter().map(|b| (0..nt).map(|k| util.eval_v(b, k)).collect()).collect();
        Ok(GridProblem { prim, util, beliefs: grid, u_tab, v_tab })
    }

    /// The finest simplex lattice with at most `max_points` points, plus the
    /// prior when it is not a lattice point.
    pub fn with_lattice(prim: Primitives, max_points: usize) -> Result<GridProblem> {
        let n = prim.n_states();
        let mut d = 1;
        while binomial(d + 1 + n - 1, n - 1) <= max_points {
            d += 1;
        }
        GridProblem::new(prim, simplex_lattice(n, d))
    }

    pub fn n_beliefs(&self) -> usize {
        self.beliefs.len()
    }

    pub fn n_times(&self) -> usize {
        self.prim.n_times()
    }

    /// Index of `mu` on the grid, if present.
    pub fn belief_index(&self, mu: &[f64]) -> Option<usize> {
        self.beliefs.iter().position(|b| same_belief(b, mu))
    }

    /// The same problem with `mu` added to the grid (a no-op when present).
    pub fn with_belief(&self, mu: &[f64]) -> Result<GridProblem> {
        if self.belief_index(mu).is_some() {
            return Ok(self.clone());
        }
        let mut beliefs = self.beliefs.clone();
        beliefs.push(mu.to_vec());
        GridProblem::new(self.prim.clone(), beliefs)
    }

    fn require_action_form(&self) -> Result<()> {
        if self.util.mode() != Mode::ActionForm {
            return Err(Error::Refused("the oracle needs action-form primitives for exact obedience rows".into()));
        }
        Ok(())
    }
}

/// One obedience row of the program: non-terminal time `time` and the
/// linear piece with coefficients `coef`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObedienceRow {
    pub time: usize,
    pub action: usize,
    pub stop_time: usize,
    pub coef: Vec<f64>,
    /// Nonnegative multiplier.
    pub multiplier: f64,
}

/// Multipliers of an optimal program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpDuals {
    /// Supporting vector: `a . mu` prices a stopping belief `mu`.
    pub support: Vec<f64>,
    pub rows: Vec<ObedienceRow>,
    /// Total obedience multiplier at each non-terminal time.
    pub increments: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub f: BeliefTimeDistribution,
    pub objective: f64,
    pub status: LpStatus,
    /// Non-terminal times whose pooled obedience residual is within 1e-7 of zero.
    pub binding_times: Vec<usize>,
    pub duals: LpDuals,
    /// Grid index of the earliest time the program may use.
    pub start: usize,
    pub iterations: usize,
}

/// The columns a program ranges over: `(belief index, time index)` pairs,
/// with obedience rows from grid time `start` on.
pub(crate) struct Layout<'a> {
    pub gp: &'a GridProblem,
    pub cols: Vec<(usize, usize)>,
    pub prior: Vec<f64>,
    pub start: usize,
}

impl<'a> Layout<'a> {
    fn product(gp: &'a GridProblem, beliefs: &[usize], prior: Vec<f64>, start: usize) -> Layout<'a> {
        let cols = beliefs.iter().flat_map(|&i| (start..gp.n_times()).map(move |k| (i, k))).collect();
        Layout { gp, cols, prior, start }
    }
}

pub(crate) fn solve_layout(layout: &Layout, opts: &SimplexOptions) -> Result<LpSolution> {
    let gp = layout.gp;
    let n = gp.prim.n_states();
    let nt = gp.n_times();
    let start = layout.start;
    let cols = &layout.cols;
    let objective: Vec<f64> = cols.iter().map(|&(i, k)| gp.v_tab[i][k]).collect();
    let mut lp = LinearProgram::new(objective);
    let all: Vec<(usize, f64)> = (0..cols.len()).map(|c| (c, 1.0)).collect();
    lp.add_row(RowKind::Eq, &all, 1.0);
    // One prior row is implied by normalization and dropped.
    for s in 1..n {
        let coefs: Vec<(usize, f64)> = cols.iter().enumerate().map(|(c, &(i, _))| (c, gp.beliefs[i][s])).collect();
        lp.add_row(RowKind::Eq, &coefs, layout.prior[s]);
    }
    let mut oc: Vec<(usize, usize, usize, Vec<f64>)> = Vec::new();
    for j in start..nt.saturating_sub(1) {
        for p in gp.util.undominated_pieces(j) {
            let coefs: Vec<(usize, f64)> = cols
                .iter()
                .enumerate()
                .filter(|(_, &(_, k))| k > j)
                .map(|(c, &(i, k))| (c, gp.u_tab[i][k] - dot(&p.coef, &gp.beliefs[i])))
                .filter(|&(_, a)| a != 0.0)
                .collect();
            lp.add_row(RowKind::Ge, &coefs, 0.0);
            oc.push((j, p.action, p.time, p.coef.clone()));
        }
    }
    let first_oc = n;
    // Structured pricing: y . A_(i,k) = y_0 + sum_s y_s mu_s + U_ik Y_k - mu . G_k,
    // where Y_k and G_k accumulate the obedience multipliers of times j < k.
    let pricer = |y: &[f64], out: &mut [f64]| {
        let mut cum_y = vec![0.0; nt];
        let mut cum_g = vec![vec![0.0; n]; nt];
        let mut acc_y = 0.0;
        let mut acc_g = vec![0.0; n];
        let mut r = 0;
        for k in 0..nt {
            cum_y[k] = acc_y;
            cum_g[k].copy_from_slice(&acc_g);
            while r < oc.len() && oc[r].0 == k {
                let yr = y[first_oc + r];
                acc_y += yr;
                for (g, c) in acc_g.iter_mut().zip(&oc[r].3) {
                    *g += yr * c;
                }
                r += 1;
            }
        }
        for (o, &(i, k)) in out.iter_mut().zip(cols) {
            let mu = &gp.beliefs[i];
            let base = y[0] + (1..n).map(|s| y[s] * mu[s]).sum::<f64>();
            *o = base + gp.u_tab[i][k] * cum_y[k] - dot(&cum_g[k], mu);
        }
    };
    let res = lp.solve_with(opts, Some(&pricer))?;
    let empty_duals = LpDuals { support: vec![0.0; n], rows: Vec::new(), increments: vec![0.0; nt - 1] };
    if res.status != LpStatus::Optimal {
        return Ok(LpSolution {
            f: BeliefTimeDistribution::new(gp.prim.times.clone(), Vec::new()),
            objective: if res.status == LpStatus::Unbounded { f64::INFINITY } else { f64::NEG_INFINITY },
            status: res.status,
            binding_times: Vec::new(),
            duals: empty_duals,
            start,
            iterations: res.iterations,
        });
    }
    let mut atoms = Vec::new();
    for (c, &x) in res.x.iter().enumerate() {
        if x > 1e-13 {
            let (i, k) = cols[c];
            atoms.push(Atom { belief: gp.beliefs[i].clone(), time: k, weight: x });
        }
    }
    let f = BeliefTimeDistribution::new(gp.prim.times.clone(), atoms);
    let support: Vec<f64> = (0..n).map(|s| res.duals[0] + if s == 0 { 0.0 } else { res.duals[s] }).collect();
    let mut increments = vec![0.0; nt - 1];
    let rows: Vec<ObedienceRow> = oc
        .iter()
        .enumerate()
        .map(|(r, (j, a, s, coef))| {
            let m = res.duals[first_oc + r].max(0.0);
            increments[*j] += m;
            ObedienceRow { time: *j, action: *a, stop_time: *s, coef: coef.clone(), multiplier: m }
        })
        .collect();
    let residuals = occ_residuals(&f, &gp.util);
    let binding_times = (start..nt - 1).filter(|&j| residuals[j].abs() <= 1e-7).collect();
    Ok(LpSolution {
        objective: f.expected_v(&gp.util),
        f,
        status: LpStatus::Optimal,
        binding_times,
        duals: LpDuals { support, rows, increments },
        start,
        iterations: res.iterations,
    })
}

/// Solves the relaxed problem on the grid with default simplex options.
///
/// ```
/// use persuade::model::Primitives;
/// use persuade::oracle::{solve_relaxed, GridProblem};
/// // static persuasion: the principal wants action 1, the agent matches the state
/// let prim = Primitives::from_fn(2, 2, vec![0.0, 1.0], vec![0.7, 0.3],
///     |s, a, t| if s == a { 1.0 - t } else { -t }, |_, a, _| a as f64).unwrap();
/// let gp = GridProblem::with_lattice(prim, 11).unwrap();
/// let sol = solve_relaxed(&gp).unwrap();
/// assert!((sol.objective - 0.6).abs() < 1e-9);
/// ```
pub fn solve_relaxed(gp: &GridProblem) -> Result<LpSolution> {
    solve_relaxed_with(gp, &SimplexOptions::default())
}

pub fn solve_relaxed_with(gp: &GridProblem, opts: &SimplexOptions) -> Result<LpSolution> {
    gp.require_action_form()?;
    let beliefs: Vec<usize> = (0..gp.n_beliefs()).collect();
    let layout = Layout::product(gp, &beliefs, gp.prim.prior.clone(), 0);
    let sol = solve_layout(&layout, opts)?;
    if sol.status == LpStatus::Infeasible {
        return Err(Error::Refused("the relaxed program is infeasible; the belief grid must contain the prior".into()));
    }
    Ok(sol)
}

/// The program restricted to full-revelation stopping beliefs.
///
/// Valid only when splitting any grid belief into the vertices cannot hurt
/// the principal, which is tested as `V(mu, t) <= sum_s mu_s V(delta_s, t)`
/// on the grid (implied by convexity of `V(., t)`). Otherwise the caller is
/// sent to [`solve_relaxed`].
pub fn solve_revelation_reduced(gp: &GridProblem) -> Result<LpSolution> {
    gp.require_action_form()?;
    let n = gp.prim.n_states();
    let vertices: Vec<usize> = (0..n).map(|s| gp.belief_index(&vertex(n, s)).expect("grid holds vertices")).collect();
    for (i, mu) in gp.beliefs.iter().enumerate() {
        for k in 0..gp.n_times() {
            let chord: f64 = (0..n).map(|s| mu[s] * gp.v_tab[vertices[s]][k]).sum();
            if gp.v_tab[i][k] > chord + 1e-9 {
                return Err(Error::Refused(format!(
                    "V(., t) is not convex at grid belief {i}, time index {k}; use solve_relaxed"
                )));
            }
        }
    }
    let layout = Layout::product(gp, &vertices, gp.prim.prior.clone(), 0);
    solve_layout(&layout, &SimplexOptions::default())
}

/// Value of the relaxed problem that starts at grid time `t` with prior `mu`.
///
/// `mu` is added to the grid if needed. At the last grid time this is the
/// concavification of `V(., t_last)` at `mu` over the grid.
pub fn interim_value_w(gp: &GridProblem, mu: &[f64], t: usize) -> Result<f64> {
    Ok(interim_solution(gp, mu, t)?.objective)
}

/// The full solution behind [`interim_value_w`].
pub fn interim_solution(gp: &GridProblem, mu: &[f64], t: usize) -> Result<LpSolution> {
    gp.require_action_form()?;
    if t >= gp.n_times() {
        return Err(Error::invalid("time", "interim time is off the grid"));
    }
    let total: f64 = mu.iter().sum();
    let mu: Vec<f64> = mu.iter().map(|x| x / total).collect();
    let owned;
    let g = match gp.belief_index(&mu) {
        Some(_) => gp,
        None => {
            owned = gp.with_belief(&mu)?;
            &owned
        }
    };
    // Only grid beliefs whose support lies inside the support of `mu` can carry mass.
    let beliefs: Vec<usize> = (0..g.n_beliefs())
        .filter(|&i| g.beliefs[i].iter().zip(&mu).all(|(b, m)| *m > 0.0 || *b <= 1e-15))
        .collect();
    let layout = Layout::product(g, &beliefs, mu, t);
    let sol = solve_layout(&layout, &SimplexOptions::default())?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::NoConvergence { what: "interim program".into(), detail: format!("{:?}", sol.status) });
    }
    Ok(sol)
}
