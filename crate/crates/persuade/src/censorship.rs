//! Tail censorship for a continuum of states.
//!
//! The state `theta` lies in `[0, 1]`. An investor who stops at `t` earns
//! `e^(-rt) max(m, 1/2)` at posterior mean `m`; the planner earns
//! `(m - theta_bar) t`. The optimal policy reveals the state at time `t`
//! exactly when it lies in an expanding band `[alpha(t), beta(t)]`, so that
//! continued silence means the state is in one of the tails.
//!
//! The band is found by integrating a backward system from the terminal
//! anchors `a = 0`, `b = 1`:
//!
//! ```text
//! a' = (M(a) + 1 - M(b)) / (pdf(a) (1/2 - a)) * r b
//! b' = -(b - a) / (1/2 - a) * r b
//! ```
//!
//! and reading it backwards, `alpha(t) = a(T - t)`, `beta(t) = b(T - t)`.
//! Near `a = 1/2` the first equation blows up, so the integrator switches
//! to `a` as the independent variable there, where the system is regular.

use serde::{Deserialize, Serialize};

use crate::model::Primitives;
use crate::numeric::rk4_step;
use crate::oracle::GridProblem;
use crate::{Error, Result};

const CELLS: usize = 4096;
const STEP: f64 = 1e-4;
const ODE_TOL: f64 = 1e-10;
/// Where the integrator switches from `t` to `a` as the independent variable.
const A_SWITCH: f64 = 0.45;

/// Prior family on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Uniform,
    /// `Beta(a, b)`; the density must be positive and finite near 0, which
    /// forces `a = 1`.
    Beta { a: f64, b: f64 },
    /// Density values on an even grid over `[0, 1]`, linearly interpolated
    /// and renormalised.
    Table { pdf: Vec<f64> },
}

/// A prior with cached cumulative integrals.
#[derive(Debug, Clone)]
pub struct Prior {
    spec: PriorSpec,
    scale: f64,
    cdf: Vec<f64>,
    moment: Vec<f64>,
}

impl Prior {
    pub fn new(spec: PriorSpec) -> Result<Prior> {
        match &spec {
            PriorSpec::Uniform => {}
            PriorSpec::Beta { a, b } => {
                if !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0) {
                    return Err(Error::invalid("prior", "beta parameters must be positive"));
                }
                if *a != 1.0 {
                    return Err(Error::invalid(
                        "prior",
                        format!("beta({a}, {b}) has a density that vanishes or explodes at 0; the band ODE needs a = 1"),
                    ));
                }
                if *b < 1.0 {
                    return Err(Error::invalid("prior", "beta density must be finite at 1 (b >= 1)"));
                }
            }
            PriorSpec::Table { pdf } => {
                if pdf.len() < 2 {
                    return Err(Error::invalid("prior", "a density table needs at least two points"));
                }
                if pdf.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::invalid("prior", "density values must be finite and nonnegative"));
                }
            }
        }
        let mut prior = Prior { spec, scale: 1.0, cdf: vec![], moment: vec![] };
        prior.build_tables();
        let total = prior.cdf[CELLS];
        if !(total > 0.0) {
            return Err(Error::invalid("prior", "density integrates to zero"));
        }
        prior.scale = 1.0 / total;
        prior.build_tables();
        let floor = (0..=1000).map(|k| prior.pdf(0.5 * k as f64 / 1000.0)).fold(f64::INFINITY, f64::min);
        if floor < 1e-8 {
            return Err(Error::invalid(
                "prior",
                "density must be bounded away from zero on [0, 1/2]; the lower cutoff equation divides by it",
            ));
        }
        Ok(prior)
    }

    pub fn uniform() -> Prior {
        Prior::new(PriorSpec::Uniform).expect("uniform prior is valid")
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    fn raw_pdf(&self, x: f64) -> f64 {
        match &self.spec {
            PriorSpec::Uniform => 1.0,
            PriorSpec::Beta { a, b } => x.powf(a - 1.0) * (1.0 - x).powf(b - 1.0),
            PriorSpec::Table { pdf } => {
                let k = pdf.len() - 1;
                let pos = x.clamp(0.0, 1.0) * k as f64;
                let i = (pos.floor() as usize).min(k - 1);
                let w = pos - i as f64;
                pdf[i] * (1.0 - w) + pdf[i + 1] * w
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.scale * self.raw_pdf(x.clamp(0.0, 1.0))
    }

    fn build_tables(&mut self) {
        let h = 1.0 / CELLS as f64;
        let mut cdf = vec![0.0; CELLS + 1];
        let mut moment = vec![0.0; CELLS + 1];
        for i in 0..CELLS {
            let (lo, hi) = (i as f64 * h, (i + 1) as f64 * h);
            let (c, m) = self.simpson_piece(lo, hi);
            cdf[i + 1] = cdf[i] + c;
            moment[i + 1] = moment[i] + m;
        }
        self.cdf = cdf;
        self.moment = moment;
    }

    fn simpson_piece(&self, lo: f64, hi: f64) -> (f64, f64) {
        let mid = 0.5 * (lo + hi);
        let (fl, fm, fh) = (self.pdf(lo), self.pdf(mid), self.pdf(hi));
        let w = (hi - lo) / 6.0;
        (w * (fl + 4.0 * fm + fh), w * (lo * fl + 4.0 * mid * fm + hi * fh))
    }

    fn cumulative(&self, x: f64) -> (f64, f64) {
        let x = x.clamp(0.0, 1.0);
        let pos = x * CELLS as f64;
        let i = (pos.floor() as usize).min(CELLS - 1);
        let lo = i as f64 / CELLS as f64;
        let (c, m) = self.simpson_piece(lo, x);
        (self.cdf[i] + c, self.moment[i] + m)
    }

    /// `M(x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.cumulative(x).0
    }

    /// `E[theta 1{theta < x}]`.
    pub fn partial_mean(&self, x: f64) -> f64 {
        self.cumulative(x).1
    }

    pub fn mean(&self) -> f64 {
        self.moment[CELLS]
    }

    /// Smallest `x` with `M(x) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone)]
pub struct CensorshipProblem {
    pub prior: Prior,
    /// Investor discount rate.
    pub r: f64,
    /// The planner's pivot state.
    pub theta_bar: f64,
}

impl CensorshipProblem {
    pub fn new(prior: Prior, r: f64, theta_bar: f64) -> Result<CensorshipProblem> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid("r", "discount rate must be positive"));
        }
        if !(0.0..=1.0).contains(&theta_bar) {
            return Err(Error::invalid("theta_bar", "pivot must lie in [0, 1]"));
        }
        Ok(CensorshipProblem { prior, r, theta_bar })
    }

    fn tail_mass(&self, a: f64, b: f64) -> f64 {
        self.prior.cdf(a) + 1.0 - self.prior.cdf(b)
    }

    /// Right-hand side of the backward system in time.
    pub fn backward_rhs(&self, a: f64, b: f64) -> (f64, f64) {
        let r = self.r;
        let da = self.tail_mass(a, b) / (self.prior.pdf(a) * (0.5 - a)) * r * b;
        let db = -(b - a) / (0.5 - a) * r * b;
        (da, db)
    }

    /// `(dt/da, db/da)`, the same system with `a` as the clock.
    fn rhs_in_a(&self, a: f64, b: f64) -> (f64, f64) {
        let s = self.tail_mass(a, b);
        let pdf = self.prior.pdf(a);
        (pdf * (0.5 - a) / (s * self.r * b), -(b - a) * pdf / s)
    }

    /// `(1 + E[theta 1{theta < 1/2}]) / (1 + M(1/2))`, the upper end of the
    /// bracket for the interior cutoff.
    pub fn theta_star_upper(&self) -> f64 {
        (1.0 + self.prior.partial_mean(0.5)) / (1.0 + self.prior.cdf(0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `b` came down to the requested target.
    Target,
    /// `a` reached 1/2.
    LowerHalf,
    /// `b` came down to 1/2.
    UpperHalf,
}

/// Solution of the backward system, in backward time `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardPath {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Backward time at which integration stopped.
    pub t0: f64,
    /// `b` at the stopping time.
    pub m_star: f64,
    pub stop_reason: StopReason,
}

/// Integrates the backward system from `(0, 1)` until `b` falls to
/// `stop_target` (if given), `a` reaches 1/2, or `b` reaches 1/2.
///
/// ```
/// use persuade::censorship::{backward_integrate, CensorshipProblem, Prior, StopReason};
/// let prob = CensorshipProblem::new(Prior::uniform(), 1.0, 0.9).unwrap();
/// assert_eq!(prob.backward_rhs(0.0, 1.0), (0.0, -2.0));
/// let path = backward_integrate(&prob, Some(0.9)).unwrap();
/// assert_eq!(path.stop_reason, StopReason::Target);
/// assert!((path.m_star - 0.9).abs() < 1e-12);
/// ```
pub fn backward_integrate(prob: &CensorshipProblem, stop_target: Option<f64>) -> Result<BackwardPath> {
    if let Some(m) = stop_target {
        if !(m > 0.5 && m <= 1.0) {
            return Err(Error::invalid("stop_target", "must lie in (1/2, 1]"));
        }
    }
    let target = stop_target.unwrap_or(0.5);
    let f = |y: &[f64]| {
        let (da, db) = prob.backward_rhs(y[0], y[1]);
        vec![da, db]
    };
    let mut s = vec![0.0];
    let mut a = vec![0.0];
    let mut b = vec![1.0];
    if stop_target == Some(1.0) {
        return Ok(BackwardPath { s, a, b, t0: 0.0, m_star: 1.0, stop_reason: StopReason::Target });
    }
    // Phase 1: time as the clock.
    let mut y = vec![0.0, 1.0];
    let mut t = 0.0;
    let event = |y: &[f64]| -> Option<StopReason> {
        if y[1] <= target {
            Some(if stop_target.is_some() { StopReason::Target } else { StopReason::UpperHalf })
        } else if y[1] <= 0.5 {
            Some(StopReason::UpperHalf)
        } else {
            None
        }
    };
    loop {
        let next = adaptive_step(&f, &y, STEP, ODE_TOL, 0);
        if let Some(reason) = event(&next) {
            // Locate the crossing of b = level inside the step.
            let level = if reason == StopReason::Target { target } else { 0.5 };
            let h = bisect_step(&f, &y, STEP, |z| z[1] - level);
            let z = adaptive_step(&f, &y, h, ODE_TOL, 0);
            s.push(t + h);
            a.push(z[0]);
            b.push(level);
            return Ok(BackwardPath { t0: t + h, m_star: level, stop_reason: reason, s, a, b });
        }
        if next[0] >= A_SWITCH {
            let h = bisect_step(&f, &y, STEP, |z| z[0] - A_SWITCH);
            let z = adaptive_step(&f, &y, h, ODE_TOL, 0);
            t += h;
            s.push(t);
            a.push(A_SWITCH);
            b.push(z[1]);
            break;
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NoConvergence {
                what: "backward system".into(),
                detail: format!("non-finite state after s = {t} (last a = {}, b = {})", y[0], y[1]),
            });
        }
        t += STEP;
        y = next;
        s.push(t);
        a.push(y[0]);
        b.push(y[1]);
        if t > 10.0 {
            return Err(Error::NoConvergence { what: "backward system".into(), detail: "no event before s = 10".into() });
        }
    }
    // Phase 2: a as the clock, state (s, b).
    let g = |z: &[f64], av: f64| {
        let (dt, db) = prob.rhs_in_a(av, z[1]);
        vec![dt, db]
    };
    let n = 4000;
    let da = (0.5 - A_SWITCH) / n as f64;
    let mut z = vec![t, *b.last().unwrap()];
    for k in 0..n {
        let a0 = A_SWITCH + k as f64 * da;
        let next = rk4_in_a(&g, &z, a0, da);
        if next[1] <= target {
            let level = target;
            let (mut lo, mut hi) = (0.0, da);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if rk4_in_a(&g, &z, a0, mid)[1] > level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let w = rk4_in_a(&g, &z, a0, hi);
            s.push(w[0]);
            a.push(a0 + hi);
            b.push(level);
            let reason = if stop_target.is_some() { StopReason::Target } else { StopReason::UpperHalf };
            return Ok(BackwardPath { t0: w[0], m_star: level, stop_reason: reason, s, a, b });
        }
        z = next;
        s.push(z[0]);
        a.push(if k + 1 == n { 0.5 } else { a0 + da });
        b.push(z[1]);
    }
    Ok(BackwardPath { t0: z[0], m_star: z[1], stop_reason: StopReason::LowerHalf, s, a, b })
}

fn adaptive_step<F: Fn(&[f64]) -> Vec<f64>>(f: &F, y: &[f64], h: f64, tol: f64, depth: u32) -> Vec<f64> {
    let whole = rk4_step(f, y, h);
    let half = rk4_step(f, &rk4_step(f, y, 0.5 * h), 0.5 * h);
    let err = whole.iter().zip(&half).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) / 15.0;
    if err <= tol || depth >= 20 || !err.is_finite() {
        return half;
    }
    let mid = adaptive_step(f, y, 0.5 * h, 0.5 * tol, depth + 1);
    adaptive_step(f, &mid, 0.5 * h, 0.5 * tol, depth + 1)
}

/// Step length in `(0, h]` at which `event` crosses zero, to 1e-12.
fn bisect_step<F: Fn(&[f64]) -> Vec<f64>>(f: &F, y: &[f64], h: f64, event: impl Fn(&[f64]) -> f64) -> f64 {
    let sign0 = event(y).signum();
    let (mut lo, mut hi) = (0.0, h);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if event(&adaptive_step(f, y, mid, ODE_TOL, 0)).signum() == sign0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn rk4_in_a<G: Fn(&[f64], f64) -> Vec<f64>>(g: &G, z: &[f64], a0: f64, h: f64) -> Vec<f64> {
    let add = |base: &[f64], k: &[f64], w: f64| base.iter().zip(k).map(|(p, q)| p + w * q).collect::<Vec<_>>();
    let k1 = g(z, a0);
    let k2 = g(&add(z, &k1, 0.5 * h), a0 + 0.5 * h);
    let k3 = g(&add(z, &k2, 0.5 * h), a0 + 0.5 * h);
    let k4 = g(&add(z, &k3, h), a0 + h);
    (0..z.len()).map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorshipCase {
    /// The pivot is at least the free cutoff: the band starts at `beta(0) = theta_bar`.
    PivotBinds,
    /// The lower cutoff starts at 1/2.
    LowerAtHalf,
    /// The upper cutoff starts at 1/2.
    UpperAtHalf,
}

impl CensorshipCase {
    pub fn tag(self) -> u8 {
        match self {
            CensorshipCase::PivotBinds => 1,
            CensorshipCase::LowerAtHalf => 2,
            CensorshipCase::UpperAtHalf => 3,
        }
    }
}

/// A tail-censorship policy sampled in forward time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorshipPolicy {
    pub r: f64,
    pub theta_bar: f64,
    /// Time at which the band covers `[0, 1]`.
    pub horizon: f64,
    pub times: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Free cutoff from the untargeted backward integration.
    pub m_star: f64,
    pub theta_star: f64,
    /// Length of the untargeted backward integration.
    pub t0: f64,
    pub case: CensorshipCase,
    pub theta_star_upper: f64,
}

impl CensorshipPolicy {
    fn locate(&self, t: f64) -> (usize, f64) {
        let t = t.clamp(0.0, self.horizon);
        let k = self.times.partition_point(|&x| x <= t).clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        (k, w)
    }

    /// `(alpha(t), beta(t))` by linear interpolation.
    pub fn band(&self, t: f64) -> (f64, f64) {
        let (k, w) = self.locate(t);
        let lerp = |v: &[f64]| v[k - 1] * (1.0 - w) + v[k] * w;
        (lerp(&self.alpha), lerp(&self.beta))
    }
}

/// Solves for the optimal band, picking the case from the free cutoff.
pub fn build_policy(prob: &CensorshipProblem) -> Result<CensorshipPolicy> {
    let free = backward_integrate(prob, None)?;
    let m_star = free.m_star;
    let (path, case) = if prob.theta_bar > 0.5 && prob.theta_bar >= m_star {
        (backward_integrate(prob, Some(prob.theta_bar))?, CensorshipCase::PivotBinds)
    } else if free.stop_reason == StopReason::LowerHalf {
        (free.clone(), CensorshipCase::LowerAtHalf)
    } else {
        (free.clone(), CensorshipCase::UpperAtHalf)
    };
    let horizon = path.t0;
    let n = path.s.len();
    let times: Vec<f64> = (0..n).rev().map(|i| (horizon - path.s[i]).max(0.0)).collect();
    let alpha: Vec<f64> = (0..n).rev().map(|i| path.a[i]).collect();
    let beta: Vec<f64> = (0..n).rev().map(|i| path.b[i]).collect();
    let upper = prob.theta_star_upper();
    if case != CensorshipCase::PivotBinds && !(m_star >= 0.5 - 1e-9 && m_star <= upper + 1e-9) {
        return Err(Error::NoConvergence {
            what: "band construction".into(),
            detail: format!("free cutoff {m_star} outside [1/2, {upper}]"),
        });
    }
    Ok(CensorshipPolicy {
        r: prob.r,
        theta_bar: prob.theta_bar,
        horizon,
        times,
        alpha,
        beta,
        m_star,
        theta_star: m_star,
        t0: free.t0,
        case,
        theta_star_upper: upper,
    })
}

/// `E[theta | theta < alpha(t) or theta > beta(t)]`, or `None` once the
/// tails carry less than 1e-12 mass.
pub fn continuation_mean(prob: &CensorshipProblem, policy: &CensorshipPolicy, t: f64) -> Option<f64> {
    let (a, b) = policy.band(t);
    tail_mean(prob, a, b)
}

fn tail_mean(prob: &CensorshipProblem, a: f64, b: f64) -> Option<f64> {
    let p = &prob.prior;
    let mass = p.cdf(a) + 1.0 - p.cdf(b);
    if mass < 1e-12 {
        return None;
    }
    Some((p.partial_mean(a) + p.mean() - p.partial_mean(b)) / mass)
}

/// `E[(m0 - m) 1{m < 1/2}] > 1 - m0`, which guarantees the backward path
/// reaches `b = m0`.
pub fn existence_sufficient(prob: &CensorshipProblem, m0: f64) -> bool {
    let p = &prob.prior;
    m0 * p.cdf(0.5) - p.partial_mean(0.5) > 1.0 - m0
}

/// Largest absolute residuals of the band identities over the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// Forward equation for `alpha`.
    pub forward_alpha: f64,
    /// Forward equation for `beta`.
    pub forward_beta: f64,
    /// `(alpha - beta) dM(alpha) - S dbeta`, per unit time.
    pub no_upward_surprise: f64,
    /// `S r m_hat + (1/2 - alpha) dM(alpha)`, per unit time.
    pub indifference: f64,
    /// `m_hat(t) - beta(t)` where the tails carry at least 1e-6 mass.
    pub mean_gap: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Band identity residuals at one interior sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySample {
    pub index: usize,
    pub forward_alpha: f64,
    pub forward_beta: f64,
    pub no_upward_surprise: f64,
    pub indifference: f64,
    /// `m_hat - beta`, or `None` when the tails carry under 1e-6 mass.
    pub mean_gap: Option<f64>,
}

/// Residuals of the forward system, the Bayes identity for the upper cutoff
/// and the investor's indifference, by finite differences on the samples.
///
/// Residuals are per unit time, except where `|alpha'| > 1`; there they
/// are per unit of `alpha`, which stays regular as `alpha` nears 1/2.
/// Samples within 1e-3 of 1/2 are skipped.
pub fn identity_residuals(prob: &CensorshipProblem, policy: &CensorshipPolicy) -> Vec<IdentitySample> {
    let p = &prob.prior;
    let (t, al, be) = (&policy.times, &policy.alpha, &policy.beta);
    let mut out = Vec::new();
    for k in 1..t.len().saturating_sub(1) {
        let (a, b) = (al[k], be[k]);
        if 0.5 - a < 1e-3 || b - 0.5 < 1e-3 {
            continue;
        }
        let (xa, xb) = prob.backward_rhs(a, b);
        let s = p.cdf(a) + 1.0 - p.cdf(b);
        let (m_hat, mean_gap) = match tail_mean(prob, a, b) {
            Some(m) if s >= 1e-6 => (m, Some(m - b)),
            _ => (b, None),
        };
        // Where alpha moves fast, differentiate against alpha instead of t.
        let use_alpha = xa > 1.0;
        let x: &[f64] = if use_alpha { al } else { t };
        let (h0, h1) = (x[k] - x[k - 1], x[k + 1] - x[k]);
        if h0.abs() <= 1e-12 || h1.abs() <= 1e-12 {
            continue;
        }
        let d = |v: &[f64]| {
            (-h1 / (h0 * (h0 + h1))) * v[k - 1] + ((h1 - h0) / (h0 * h1)) * v[k] + (h0 / (h1 * (h0 + h1))) * v[k + 1]
        };
        let pdf = p.pdf(a);
        let (fa, fb, nus, ind) = if use_alpha {
            let (dt, db) = (d(t), d(be));
            (dt + 1.0 / xa, db - xb / xa, (a - b) * pdf - s * db, s * prob.r * m_hat * dt + (0.5 - a) * pdf)
        } else {
            let (da, db) = (d(al), d(be));
            let dm = pdf * da;
            (da + xa, db + xb, (a - b) * dm - s * db, s * prob.r * m_hat + (0.5 - a) * dm)
        };
        out.push(IdentitySample {
            index: k,
            forward_alpha: fa,
            forward_beta: fb,
            no_upward_surprise: nus,
            indifference: ind,
            mean_gap,
        });
    }
    out
}

/// Folds [`identity_residuals`] into maxima and checks them against `tol`.
pub fn verify_identities(prob: &CensorshipProblem, policy: &CensorshipPolicy, tol: f64) -> IdentityReport {
    let samples = identity_residuals(prob, policy);
    let mut rep = IdentityReport {
        forward_alpha: 0.0,
        forward_beta: 0.0,
        no_upward_surprise: 0.0,
        indifference: 0.0,
        mean_gap: 0.0,
        samples: samples.len(),
        passed: false,
    };
    for x in &samples {
        rep.forward_alpha = rep.forward_alpha.max(x.forward_alpha.abs());
        rep.forward_beta = rep.forward_beta.max(x.forward_beta.abs());
        rep.no_upward_surprise = rep.no_upward_surprise.max(x.no_upward_surprise.abs());
        rep.indifference = rep.indifference.max(x.indifference.abs());
        if let Some(g) = x.mean_gap {
            rep.mean_gap = rep.mean_gap.max(g.abs());
        }
    }
    rep.passed = rep.samples > 0
        && rep.forward_alpha <= tol
        && rep.forward_beta <= tol
        && rep.no_upward_surprise <= tol
        && rep.indifference <= tol
        && rep.mean_gap <= tol;
    rep
}

/// Re-integrates the forward system from `(alpha(0), beta(0))` and returns
/// the band at the horizon, which should be `(0, 1)`.
pub fn forward_endpoints(prob: &CensorshipProblem, policy: &CensorshipPolicy) -> (f64, f64) {
    // Start past the singular layer at 1/2 if the band begins there.
    let start = (0..policy.times.len())
        .find(|&k| 0.5 - policy.alpha[k] >= 1e-3 && policy.beta[k] - 0.5 >= 1e-3)
        .unwrap_or(0);
    let f = |y: &[f64]| {
        let (da, db) = prob.backward_rhs(y[0], y[1]);
        vec![-da, -db]
    };
    let mut y = vec![policy.alpha[start], policy.beta[start]];
    let mut t = policy.times[start];
    while t < policy.horizon - 1e-15 {
        let h = STEP.min(policy.horizon - t);
        y = adaptive_step(&f, &y, h, ODE_TOL, 0);
        t += h;
    }
    (y[0], y[1])
}

/// Planner's expected payoff `E[(theta - theta_bar) tau]` under the band.
pub fn policy_payoff(prob: &CensorshipProblem, policy: &CensorshipPolicy) -> f64 {
    let p = &prob.prior;
    let tb = prob.theta_bar;
    let (t, al, be) = (&policy.times, &policy.alpha, &policy.beta);
    let mut total = 0.0;
    for k in 0..t.len() - 1 {
        // Mass revealed between consecutive samples, at its conditional mean.
        let low_mass = p.cdf(al[k]) - p.cdf(al[k + 1]);
        let low_mom = p.partial_mean(al[k]) - p.partial_mean(al[k + 1]);
        let high_mass = p.cdf(be[k + 1]) - p.cdf(be[k]);
        let high_mom = p.partial_mean(be[k + 1]) - p.partial_mean(be[k]);
        let tm = 0.5 * (t[k] + t[k + 1]);
        total += tm * (low_mom - tb * low_mass + high_mom - tb * high_mass);
    }
    total
}

/// Outcome of the multiplier check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorshipFocReport {
    /// Largest value of the Lagrangian derivative on the sample grid.
    pub max_l: f64,
    /// Largest `|l|` on the band edges.
    pub support_gap: f64,
    /// Largest `|l(m, 0)|` for `m` in the time-0 revelation interval.
    pub interval_gap: f64,
    /// Largest time slope of `l` after the horizon; should be `<= 0`.
    pub late_slope: f64,
    pub gamma_convex: bool,
    pub passed: bool,
}

/// Builds the explicit multipliers for the band and evaluates the
/// Lagrangian derivative `l(m, t)` on a grid.
pub fn verify_foc_censorship(prob: &CensorshipProblem, policy: &CensorshipPolicy, tol: f64) -> CensorshipFocReport {
    let r = prob.r;
    let tb = prob.theta_bar;
    let (t, al, be) = (&policy.times, &policy.alpha, &policy.beta);
    let n = t.len();
    // Lambda(t) e^{-rt} on the band: (beta - tb) / (r beta).
    let lam_disc: Vec<f64> = be.iter().map(|b| (b - tb) / (r * b)).collect();
    // J(t) = int_0^t e^{-rs} Lambda(s) ds and C(t) = int_0^t ds / beta(s).
    let mut jint = vec![0.0; n];
    let mut cint = vec![0.0; n];
    for k in 1..n {
        let h = t[k] - t[k - 1];
        jint[k] = jint[k - 1] + 0.5 * h * (lam_disc[k] + lam_disc[k - 1]);
        cint[k] = cint[k - 1] + 0.5 * h * (1.0 / be[k] + 1.0 / be[k - 1]);
    }
    // Gamma tabulated along the band edges.
    let mut upper = vec![(be[0], 0.0)];
    let mut lower = vec![(al[0], 0.0)];
    for k in 1..n {
        let gp = |j: usize| tb * cint[j];
        let gm = |j: usize| tb * cint[j] - (1.0 - tb / be[j]) / r;
        let (pu, pl) = (upper[k - 1].1, lower[k - 1].1);
        upper.push((be[k], pu + 0.5 * (gp(k) + gp(k - 1)) * (be[k] - be[k - 1])));
        lower.push((al[k], pl + 0.5 * (gm(k) + gm(k - 1)) * (al[k] - al[k - 1])));
    }
    lower.reverse();
    let gamma = |m: f64| -> f64 {
        if m >= be[0] {
            interp(&upper, m)
        } else if m <= al[0] {
            interp(&lower, m)
        } else {
            0.0
        }
    };
    let jump = match policy.case {
        CensorshipCase::UpperAtHalf => lam_disc[0],
        _ => 0.0,
    };
    let horizon = policy.horizon;
    let l_at = |m: f64, k: usize, late: f64| -> f64 {
        // Index k on the band grid; `late` extends past the horizon.
        if k == 0 && late == 0.0 {
            return -gamma(m);
        }
        let tt = t[k] + late;
        let (lam_e, j) = if late > 0.0 {
            let c = (1.0 - tb) / r;
            (c, jint[n - 1] + c * late)
        } else {
            (lam_disc[k], jint[k])
        };
        let kink = if m <= 0.5 { (0.5 - m) * lam_e } else { 0.0 };
        (m - tb) * tt + kink + jump * (m - 0.5) - r * m * j - gamma(m)
    };
    let mut rep = CensorshipFocReport {
        max_l: f64::NEG_INFINITY,
        support_gap: 0.0,
        interval_gap: 0.0,
        late_slope: f64::NEG_INFINITY,
        gamma_convex: true,
        passed: false,
    };
    let stride = (n / 400).max(1);
    let ms: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
    for k in (0..n).step_by(stride).chain(std::iter::once(n - 1)) {
        for &m in &ms {
            rep.max_l = rep.max_l.max(l_at(m, k, 0.0));
        }
        if k > 0 {
            rep.support_gap = rep.support_gap.max(l_at(al[k], k, 0.0).abs()).max(l_at(be[k], k, 0.0).abs());
        }
    }
    for i in 0..=100 {
        let m = al[0] + (be[0] - al[0]) * i as f64 / 100.0;
        rep.interval_gap = rep.interval_gap.max(l_at(m, 0, 0.0).abs());
    }
    for late in [0.1, 0.5, 1.0] {
        for &m in &ms {
            let v = l_at(m, n - 1, late);
            rep.max_l = rep.max_l.max(v);
            let slope = (l_at(m, n - 1, late + 1e-3) - v) / 1e-3;
            rep.late_slope = rep.late_slope.max(slope);
        }
    }
    let g: Vec<f64> = ms.iter().map(|&m| gamma(m)).collect();
    rep.gamma_convex = g.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= -1e-8);
    let _ = horizon;
    rep.passed = rep.max_l <= tol && rep.support_gap <= tol && rep.interval_gap <= tol && rep.gamma_convex;
    rep
}

fn interp(points: &[(f64, f64)], x: f64) -> f64 {
    let k = points.partition_point(|p| p.0 <= x).clamp(1, points.len() - 1);
    let (x0, y0) = points[k - 1];
    let (x1, y1) = points[k];
    if x1 > x0 {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    } else {
        y0
    }
}

/// Discrete states for the oracle: the conditional means of `n_theta`
/// equal-probability bins, each with mass `1 / n_theta`.
pub fn discrete_states(prob: &CensorshipProblem, n_theta: usize) -> Vec<f64> {
    let p = &prob.prior;
    let cuts: Vec<f64> = (0..=n_theta).map(|i| p.quantile(i as f64 / n_theta as f64)).collect();
    cuts.windows(2)
        .map(|w| (p.partial_mean(w[1]) - p.partial_mean(w[0])) * n_theta as f64)
        .collect()
}

/// The finite version of the problem: `n_theta` states, actions
/// `risky`/`safe`, `n_t` even times on `[0, horizon]`. Beliefs are the
/// vertices, the prior, and two-state mixtures at weights 1/4, 1/2, 3/4.
pub fn discretize_for_oracle(prob: &CensorshipProblem, n_theta: usize, n_t: usize, horizon: f64) -> Result<GridProblem> {
    if !(2..=41).contains(&n_theta) || !(2..=16).contains(&n_t) {
        return Err(Error::invalid("grid", "need 2 <= n_theta <= 41 and 2 <= n_t <= 16"));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    let theta = discrete_states(prob, n_theta);
    let times: Vec<f64> = (0..n_t).map(|k| horizon * k as f64 / (n_t - 1) as f64).collect();
    let r = prob.r;
    let tb = prob.theta_bar;
    let mut prim = Primitives::from_fn(
        n_theta,
        2,
        times,
        vec![1.0 / n_theta as f64; n_theta],
        |s, a, t| (-r * t).exp() * if a == 0 { theta[s] } else { 0.5 },
        |s, _, t| (theta[s] - tb) * t,
    )?;
    prim.states = theta.iter().map(|x| format!("{x:.6}")).collect();
    prim.actions = vec!["risky".into(), "safe".into()];
    let mut beliefs = Vec::new();
    for i in 0..n_theta {
        for j in i + 1..n_theta {
            for w in [0.25, 0.5, 0.75] {
                let mut b = vec![0.0; n_theta];
                b[i] = w;
                b[j] = 1.0 - w;
                beliefs.push(b);
            }
        }
    }
    GridProblem::new(prim, beliefs)
}

/// Whether the distribution `post` of posterior means (value, weight) is
/// a mean-preserving contraction of `prior`, by comparing integrated cdfs
/// at every support point.
pub fn is_mean_preserving_contraction(prior: &[(f64, f64)], post: &[(f64, f64)], tol: f64) -> bool {
    let mean = |d: &[(f64, f64)]| d.iter().map(|(x, w)| x * w).sum::<f64>();
    if (mean(prior) - mean(post)).abs() > tol {
        return false;
    }
    let integrated = |d: &[(f64, f64)], x: f64| d.iter().map(|(y, w)| w * (x - y).max(0.0)).sum::<f64>();
    prior.iter().chain(post).all(|&(x, _)| integrated(post, x) <= integrated(prior, x) + tol)
}
