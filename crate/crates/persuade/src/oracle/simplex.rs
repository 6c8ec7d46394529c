//! A two-phase revised simplex method with an explicit dense basis inverse.
//!
//! Problems are stated as `maximize c.x` subject to equality rows `A x = b`,
//! greater-or-equal rows `A x >= b` and `x >= 0`. The constraint matrix is
//! stored by sparse columns; the basis inverse is dense, updated by a
//! product-form pivot each iteration and rebuilt by Gauss-Jordan elimination
//! every [`SimplexOptions::refactor_every`] pivots.

use crate::error::{Error, Result};

/// Row sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Ge,
}

/// Entering-variable rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Smallest eligible index, smallest leaving index. Never cycles.
    Bland,
    /// Largest reduced cost, switching to Bland's rule after a run of
    /// degenerate pivots and back once the objective moves.
    DantzigBland { degenerate_limit: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub rule: PivotRule,
    /// Reduced costs and ratio-test pivots below this are treated as zero.
    pub tol: f64,
    pub refactor_every: usize,
    pub max_iters: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            rule: PivotRule::DantzigBland { degenerate_limit: 50 },
            tol: 1e-9,
            refactor_every: 100,
            max_iters: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of a solve. `x`, `value` and `duals` are meaningful only when
/// `status` is [`LpStatus::Optimal`].
#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub value: f64,
    /// One multiplier per row. Equality rows report `d value / d b`;
    /// greater-or-equal rows report `-d value / d b`, which is nonnegative.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

/// Sparse column `(row, value)` pairs.
pub type Column = Vec<(usize, f64)>;

/// A linear program in the form described in the module docs.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub columns: Vec<Column>,
    pub kinds: Vec<RowKind>,
    pub rhs: Vec<f64>,
}

/// Computes `out[j] = y . A_j` for every structural column at once.
///
/// Supplying one lets a caller with structured columns price in less than
/// `nnz(A)` work; `y` is indexed by the original rows.
pub type Pricer<'a> = &'a (dyn Fn(&[f64], &mut [f64]) + Sync);

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> LinearProgram {
        let n = objective.len();
        LinearProgram { objective, columns: vec![Vec::new(); n], kinds: Vec::new(), rhs: Vec::new() }
    }

    /// Appends a row given as `(column, coefficient)` pairs and returns its index.
    pub fn add_row(&mut self, kind: RowKind, coefs: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.rhs.len();
        for &(j, a) in coefs {
            if a != 0.0 {
                self.columns[j].push((r, a));
            }
        }
        self.kinds.push(kind);
        self.rhs.push(rhs);
        r
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn n_cols(&self) -> usize {
        self.objective.len()
    }

    pub fn solve(&self, opts: &SimplexOptions) -> Result<LpResult> {
        self.solve_with(opts, None)
    }

    pub fn solve_with(&self, opts: &SimplexOptions, pricer: Option<Pricer<'_>>) -> Result<LpResult> {
        for col in &self.columns {
            if col.iter().any(|&(r, a)| r >= self.n_rows() || !a.is_finite()) {
                return Err(Error::invalid("lp", "column entry out of range or not finite"));
            }
        }
        if self.rhs.iter().chain(&self.objective).any(|v| !v.is_finite()) {
            return Err(Error::invalid("lp", "data must be finite"));
        }
        let mut solver = Solver::new(self, *opts, pricer);
        solver.run()
    }
}

/// `maximize c.x` s.t. `a_eq x = b_eq`, `a_ge x >= b_ge`, `x >= 0`, dense input.
///
/// ```
/// use persuade::oracle::simplex::{solve_lp_standard_form, LpStatus};
/// // max x subject to -x >= -1
/// let r = solve_lp_standard_form(&[1.0], &[], &[], &[vec![-1.0]], &[-1.0]).unwrap();
/// assert_eq!(r.status, LpStatus::Optimal);
/// assert!((r.x[0] - 1.0).abs() < 1e-12);
/// ```
pub fn solve_lp_standard_form(
    c: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
    a_ge: &[Vec<f64>],
    b_ge: &[f64],
) -> Result<LpResult> {
    if a_eq.len() != b_eq.len() || a_ge.len() != b_ge.len() {
        return Err(Error::invalid("lp", "row count and rhs length differ"));
    }
    let mut lp = LinearProgram::new(c.to_vec());
    for (kind, a, b) in [(RowKind::Eq, a_eq, b_eq), (RowKind::Ge, a_ge, b_ge)] {
        for (row, &rhs) in a.iter().zip(b) {
            if row.len() != c.len() {
                return Err(Error::invalid("lp", "row length differs from objective length"));
            }
            let coefs: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
            lp.add_row(kind, &coefs, rhs);
        }
    }
    lp.solve(&SimplexOptions::default())
}

struct Solver<'a> {
    lp: &'a LinearProgram,
    opts: SimplexOptions,
    pricer: Option<Pricer<'a>>,
    m: usize,
    n: usize,
    /// Sign applied to each original row so that the working rhs is nonnegative.
    sign: Vec<f64>,
    b: Vec<f64>,
    /// Working columns: structural (sign applied), then one slack per ge row,
    /// then artificials.
    extra: Vec<Column>,
    first_artificial: usize,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl<'a> Solver<'a> {
    fn new(lp: &'a LinearProgram, opts: SimplexOptions, pricer: Option<Pricer<'a>>) -> Solver<'a> {
        let m = lp.n_rows();
        let n = lp.n_cols();
        let mut sign = vec![1.0; m];
        let mut b = lp.rhs.clone();
        let mut extra: Vec<Column> = Vec::new();
        let mut basis = vec![usize::MAX; m];
        // Slacks: a.x - s = b. A ge row with b <= 0 is negated so that its
        // slack enters the starting basis at a nonnegative level.
        for r in 0..m {
            if lp.kinds[r] == RowKind::Ge {
                if b[r] <= 0.0 {
                    sign[r] = -1.0;
                    b[r] = -b[r];
                    extra.push(vec![(r, 1.0)]);
                    basis[r] = n + extra.len() - 1;
                } else {
                    extra.push(vec![(r, -1.0)]);
                }
            } else if b[r] < 0.0 {
                sign[r] = -1.0;
                b[r] = -b[r];
            }
        }
        let first_artificial = n + extra.len();
        for r in 0..m {
            if basis[r] == usize::MAX {
                extra.push(vec![(r, 1.0)]);
                basis[r] = n + extra.len() - 1;
            }
        }
        let total = n + extra.len();
        let mut is_basic = vec![false; total];
        for &j in &basis {
            is_basic[j] = true;
        }
        let mut binv = vec![0.0; m * m];
        for r in 0..m {
            binv[r * m + r] = 1.0;
        }
        let xb = b.clone();
        Solver {
            lp,
            opts,
            pricer,
            m,
            n,
            sign,
            b,
            extra,
            first_artificial,
            basis,
            is_basic,
            binv,
            xb,
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn total(&self) -> usize {
        self.n + self.extra.len()
    }

    fn for_column(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n {
            for &(r, a) in &self.lp.columns[j] {
                f(r, self.sign[r] * a);
            }
        } else {
            for &(r, a) in &self.extra[j - self.n] {
                f(r, a);
            }
        }
    }

    /// `B^-1 A_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        self.for_column(j, |r, a| {
            for i in 0..m {
                w[i] += self.binv[i * m + r] * a;
            }
        });
        w
    }

    /// `c_B B^-1` for the given cost vector over working columns.
    fn duals(&self, cost: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let c = cost(self.basis[i]);
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yr, br) in y.iter_mut().zip(row) {
                    *yr += c * br;
                }
            }
        }
        y
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        // Gauss-Jordan on [B | I] with partial pivoting.
        let mut a = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            self.for_column(j, |r, v| a[r * m + k] = v);
        }
        let mut inv = vec![0.0; m * m];
        for r in 0..m {
            inv[r * m + r] = 1.0;
        }
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&p, &q| a[p * m + col].abs().total_cmp(&a[q * m + col].abs()))
                .unwrap_or(col);
            if a[piv * m + col].abs() < 1e-13 {
                return Err(Error::NoConvergence {
                    what: "simplex".into(),
                    detail: "basis matrix became singular".into(),
                });
            }
            if piv != col {
                for k in 0..m {
                    a.swap(piv * m + k, col * m + k);
                    inv.swap(piv * m + k, col * m + k);
                }
            }
            let d = 1.0 / a[col * m + col];
            for k in 0..m {
                a[col * m + k] *= d;
                inv[col * m + k] *= d;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = a[r * m + col];
                if f != 0.0 {
                    for k in 0..m {
                        a[r * m + k] -= f * a[col * m + k];
                        inv[r * m + k] -= f * inv[col * m + k];
                    }
                }
            }
        }
        // Rows of `inv` are indexed by basis position after the row swaps
        // above, which is exactly B^-1.
        self.binv = inv;
        let mut xb = vec![0.0; m];
        for i in 0..m {
            xb[i] = (0..m).map(|r| self.binv[i * m + r] * self.b[r]).sum();
        }
        self.xb = xb;
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, r: usize, q: usize, w: &[f64]) {
        let m = self.m;
        let wr = w[r];
        let theta = self.xb[r] / wr;
        for i in 0..m {
            if i != r {
                self.xb[i] -= theta * w[i];
            }
        }
        self.xb[r] = theta;
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= wr;
        }
        for (i, row) in before.chunks_mut(m).chain(after.chunks_mut(m)).enumerate() {
            let i = if i < r { i } else { i + 1 };
            let f = w[i];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
            }
        }
        self.is_basic[self.basis[r]] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        self.iterations += 1;
        self.since_refactor += 1;
    }

    /// Reduced costs `c_j - y.A_j` over working columns not excluded.
    fn reduced_costs(&self, y: &[f64], cost: &dyn Fn(usize) -> f64, allowed: usize) -> Vec<f64> {
        let mut d = vec![0.0; allowed];
        match self.pricer {
            Some(p) => {
                let yo: Vec<f64> = y.iter().zip(&self.sign).map(|(a, s)| a * s).collect();
                p(&yo, &mut d[..self.n]);
            }
            None => {
                for (j, dj) in d.iter_mut().enumerate().take(self.n) {
                    *dj = self.lp.columns[j].iter().map(|&(r, a)| y[r] * self.sign[r] * a).sum();
                }
            }
        }
        for (j, dj) in d.iter_mut().enumerate().skip(self.n) {
            let mut s = 0.0;
            self.for_column(j, |r, a| s += y[r] * a);
            *dj = s;
        }
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = cost(j) - *dj;
        }
        d
    }

    /// Runs simplex iterations for the given costs over columns `< allowed`.
    /// Returns false when the problem is unbounded in that phase.
    fn optimize(&mut self, cost: &dyn Fn(usize) -> f64, allowed: usize) -> Result<bool> {
        let tol = self.opts.tol;
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= self.opts.max_iters {
                return Err(Error::NoConvergence {
                    what: "simplex".into(),
                    detail: format!("iteration limit {} reached", self.opts.max_iters),
                });
            }
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
            let y = self.duals(cost);
            let d = self.reduced_costs(&y, cost, allowed);
            let bland = match self.opts.rule {
                PivotRule::Bland => true,
                PivotRule::DantzigBland { degenerate_limit } => degenerate_run >= degenerate_limit,
            };
            let entering = if bland {
                (0..allowed).find(|&j| !self.is_basic[j] && d[j] > tol)
            } else {
                (0..allowed)
                    .filter(|&j| !self.is_basic[j] && d[j] > tol)
                    .max_by(|&p, &q| d[p].total_cmp(&d[q]).then(q.cmp(&p)))
            };
            let Some(q) = entering else {
                return Ok(true);
            };
            let w = self.ftran(q);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if w[i] > tol {
                    let ratio = self.xb[i].max(0.0) / w[i];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-12 {
                                Some((i, ratio))
                            } else if ratio <= best + 1e-12 {
                                let better = if bland {
                                    self.basis[i] < self.basis[k]
                                } else {
                                    w[i] > w[k]
                                };
                                if better { Some((i, ratio)) } else { Some((k, best)) }
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(false);
            };
            if ratio * d[q] <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, q, &w);
        }
    }

    fn run(&mut self) -> Result<LpResult> {
        let total = self.total();
        let first_art = self.first_artificial;
        let infeasible = |s: &Solver| LpResult {
            status: LpStatus::Infeasible,
            x: vec![0.0; s.n],
            value: f64::NAN,
            duals: vec![0.0; s.m],
            iterations: s.iterations,
        };
        if first_art < total {
            let phase1 = move |j: usize| if j >= first_art { -1.0 } else { 0.0 };
            self.optimize(&phase1, total)?;
            self.refactor()?;
            let infeas: f64 =
                (0..self.m).filter(|&i| self.basis[i] >= first_art).map(|i| self.xb[i].max(0.0)).sum();
            let scale = 1.0 + self.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if infeas > 1e-7 * scale {
                return Ok(infeasible(self));
            }
            self.drive_out_artificials()?;
        }
        let n = self.n;
        let obj = &self.lp.objective;
        let phase2 = |j: usize| if j < n { obj[j] } else { 0.0 };
        let bounded = self.optimize(&phase2, first_art)?;
        if !bounded {
            return Ok(LpResult {
                status: LpStatus::Unbounded,
                x: vec![0.0; n],
                value: f64::INFINITY,
                duals: vec![0.0; self.m],
                iterations: self.iterations,
            });
        }
        self.refactor()?;
        // A final pricing pass after the clean refactorization; rarely moves.
        let bounded = self.optimize(&phase2, first_art)?;
        if !bounded {
            return Ok(LpResult {
                status: LpStatus::Unbounded,
                x: vec![0.0; n],
                value: f64::INFINITY,
                duals: vec![0.0; self.m],
                iterations: self.iterations,
            });
        }
        let mut x = vec![0.0; n];
        for i in 0..self.m {
            if self.basis[i] < n {
                x[self.basis[i]] = self.xb[i].max(0.0);
            }
        }
        let value = x.iter().zip(obj).map(|(a, c)| a * c).sum();
        let y = self.duals(&phase2);
        let duals = (0..self.m)
            .map(|r| {
                let v = y[r] * self.sign[r];
                match self.lp.kinds[r] {
                    RowKind::Eq => v,
                    RowKind::Ge => -v,
                }
            })
            .collect();
        Ok(LpResult { status: LpStatus::Optimal, x, value, duals, iterations: self.iterations })
    }

    /// Pivots zero-level artificials out of the basis where possible. Rows
    /// where no pivot exists are redundant and keep their artificial at zero.
    fn drive_out_artificials(&mut self) -> Result<()> {
        let m = self.m;
        for r in 0..m {
            if self.basis[r] < self.first_artificial {
                continue;
            }
            let row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.first_artificial {
                if self.is_basic[j] {
                    continue;
                }
                let mut v = 0.0;
                self.for_column(j, |i, a| v += row[i] * a);
                if v.abs() > 1e-7 && best.map_or(true, |(_, b)| v.abs() > b) {
                    best = Some((j, v.abs()));
                }
            }
            if let Some((j, _)) = best {
                let w = self.ftran(j);
                self.xb[r] = 0.0;
                self.pivot(r, j, &w);
            }
        }
        self.refactor()
    }
}
