//! Two states, two actions, linear waiting cost.
//!
//! The state is `L` or `R`, the agent picks `l` or `r` and wants to match
//! the state, and waiting costs `t`. The principal gets `v_l + h_l(t)` or
//! `v_r + h_r(t)` depending on the action taken at time `t`. Beliefs in this
//! module are scalars (the probability of `R`); [`SuspenseStrategy::belief_vector`]
//! and the exporters convert to the `[P(L), P(R)]` vectors used elsewhere.
//!
//! Every strategy here has the same skeleton. Until `t1` the principal
//! keeps the agent on one of two belief paths (suspense). At `t1` the agents
//! on one path stop; the rest enter a targeting stage in which one state is
//! revealed at unit hazard, until everybody left stops at `t2`. The variants
//! differ in which state is revealed and where the paths end:
//!
//! | variant | stops at `t1` | revealed during `[t1, t2]` | stops at `t2` |
//! |---|---|---|---|
//! | `SuspenseEll` | belief 0, action `l` | `L` | `r` |
//! | `SuspenseR` | belief 1, action `r` | `R` | `l` |
//! | `InconclusiveEll` | interior belief, `l` | `L` | belief 1, `r` |
//! | `InconclusiveR` | interior belief, `r` | `R` | belief 0, `l` |
//!
//! The two static variants are the zero-length windows of `SuspenseEll` and
//! `InconclusiveR`; both split the prior into beliefs 0 and 1/2 at time 0.

use serde::{Deserialize, Serialize};

use crate::model::{Atom, BeliefTimeDistribution, Primitives};
use crate::numeric::{bisect, integrate};
use crate::{Error, Result};

const QUAD_TOL: f64 = 1e-11;
const ROOT_TOL: f64 = 1e-13;

/// A delay gain `h` with `h(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayGain {
    /// `slope * t`
    Linear { slope: f64 },
    /// `scale * ln(1 + t)`
    Log { scale: f64 },
    /// `scale * ((1 + t)^exponent - 1)`
    Power { scale: f64, exponent: f64 },
    /// `sum_k coefs[k] * t^(k + 1)`; there is no constant term.
    Poly { coefs: Vec<f64> },
}

impl DelayGain {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            DelayGain::Linear { slope } => slope * t,
            DelayGain::Log { scale } => scale * t.ln_1p(),
            DelayGain::Power { scale, exponent } => scale * ((1.0 + t).powf(*exponent) - 1.0),
            DelayGain::Poly { coefs } => coefs.iter().rev().fold(0.0, |acc, c| (acc + c) * t),
        }
    }

    pub fn d1(&self, t: f64) -> f64 {
        match self {
            DelayGain::Linear { slope } => *slope,
            DelayGain::Log { scale } => scale / (1.0 + t),
            DelayGain::Power { scale, exponent } => scale * exponent * (1.0 + t).powf(exponent - 1.0),
            DelayGain::Poly { coefs } => {
                coefs.iter().enumerate().rev().fold(0.0, |acc, (k, c)| acc * t + (k + 1) as f64 * c)
            }
        }
    }

    pub fn d2(&self, t: f64) -> f64 {
        match self {
            DelayGain::Linear { .. } => 0.0,
            DelayGain::Log { scale } => -scale / ((1.0 + t) * (1.0 + t)),
            DelayGain::Power { scale, exponent } => {
                scale * exponent * (exponent - 1.0) * (1.0 + t).powf(exponent - 2.0)
            }
            DelayGain::Poly { coefs } => coefs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * t + ((k + 1) * k) as f64 * c),
        }
    }

    /// Parses `linear:a`, `log:a`, `power:a,p` or `poly:c1,c2,...`.
    ///
    /// ```
    /// use persuade::binary::DelayGain;
    /// let h: DelayGain = "poly:1,-0.25".parse().unwrap();
    /// assert_eq!(h.value(2.0), 2.0 - 1.0);
    /// assert_eq!(h.d1(2.0), 0.0);
    /// ```
    fn parse_spec(s: &str) -> Result<DelayGain> {
        let (family, rest) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = rest
            .split(',')
            .filter(|x| !x.trim().is_empty())
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid("delay gain", format!("{s}: {e}")))?;
        let want = |k: usize| {
            if nums.len() == k {
                Ok(())
            } else {
                Err(Error::invalid("delay gain", format!("{family} takes {k} coefficient(s), got {}", nums.len())))
            }
        };
        match family.trim() {
            "linear" => want(1).map(|_| DelayGain::Linear { slope: nums[0] }),
            "log" => want(1).map(|_| DelayGain::Log { scale: nums[0] }),
            "power" => want(2).map(|_| DelayGain::Power { scale: nums[0], exponent: nums[1] }),
            "poly" if !nums.is_empty() => Ok(DelayGain::Poly { coefs: nums }),
            "poly" => Err(Error::invalid("delay gain", "poly needs at least one coefficient")),
            other => Err(Error::invalid("delay gain", format!("unknown family {other:?}"))),
        }
    }
}

impl std::str::FromStr for DelayGain {
    type Err = Error;

    fn from_str(s: &str) -> Result<DelayGain> {
        DelayGain::parse_spec(s)
    }
}

/// Parameters of the binary environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryPersuasionSpec {
    /// Prior probability of `R`, in `(0, 1/2)`.
    pub mu0: f64,
    pub v_ell: f64,
    pub v_r: f64,
    pub h_ell: DelayGain,
    pub h_r: DelayGain,
}

impl BinaryPersuasionSpec {
    pub fn new(mu0: f64, v_ell: f64, v_r: f64, h_ell: DelayGain, h_r: DelayGain) -> Result<BinaryPersuasionSpec> {
        let spec = BinaryPersuasionSpec { mu0, v_ell, v_r, h_ell, h_r };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0 && self.mu0 < 0.5) {
            return Err(Error::invalid("mu0", format!("{} is not in (0, 1/2)", self.mu0)));
        }
        if !(self.v_ell.is_finite() && self.v_r.is_finite()) {
            return Err(Error::invalid("v", "action values must be finite"));
        }
        if self.v_r < self.v_ell {
            return Err(Error::invalid("v", "labels are normalised so that v_r >= v_ell; swap the states"));
        }
        for (name, h) in [("h_ell", &self.h_ell), ("h_r", &self.h_r)] {
            if let DelayGain::Poly { coefs } = h {
                if coefs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid(name, "coefficients must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn dv(&self) -> f64 {
        self.v_r - self.v_ell
    }

    pub fn dh(&self, t: f64) -> f64 {
        self.h_r.value(t) - self.h_ell.value(t)
    }

    pub fn dh1(&self, t: f64) -> f64 {
        self.h_r.d1(t) - self.h_ell.d1(t)
    }

    fn gain(&self, action: Side) -> (&DelayGain, f64) {
        match action {
            Side::Ell => (&self.h_ell, self.v_ell),
            Side::R => (&self.h_r, self.v_r),
        }
    }

    fn payoff(&self, action: Side, t: f64) -> f64 {
        let (h, v) = self.gain(action);
        v + h.value(t)
    }

    /// The grid version of this environment for the oracle: states `L, R`,
    /// actions `l, r`, agent payoff `1{match} - t`.
    pub fn to_primitives(&self, times: Vec<f64>) -> Result<Primitives> {
        let mut p = Primitives::from_fn(
            2,
            2,
            times,
            vec![1.0 - self.mu0, self.mu0],
            |s, a, t| if s == a { 1.0 - t } else { -t },
            |_, a, t| if a == 0 { self.v_ell + self.h_ell.value(t) } else { self.v_r + self.h_r.value(t) },
        )?;
        p.states = vec!["L".into(), "R".into()];
        p.actions = vec!["l".into(), "r".into()];
        Ok(p)
    }

    /// Upper end of the time range used for shape tests: the longest
    /// targeting stage any variant can run, plus one.
    pub fn horizon(&self) -> f64 {
        std::f64::consts::LN_2 + 1.0
    }
}

/// One of the two actions, also naming the state revealed during targeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Ell,
    R,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Ell => Side::R,
            Side::R => Side::Ell,
        }
    }

    fn vertex(self) -> f64 {
        match self {
            Side::Ell => 0.0,
            Side::R => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SuspenseEll,
    SuspenseR,
    InconclusiveEll,
    InconclusiveR,
    StaticKgEll,
    StaticKgR,
}

impl Variant {
    /// The state revealed during targeting, which is also the action taken
    /// by everybody who stops before `t2`.
    pub fn revealed(self) -> Side {
        match self {
            Variant::SuspenseEll | Variant::InconclusiveEll | Variant::StaticKgEll => Side::Ell,
            Variant::SuspenseR | Variant::InconclusiveR | Variant::StaticKgR => Side::R,
        }
    }

    pub fn is_static(self) -> bool {
        matches!(self, Variant::StaticKgEll | Variant::StaticKgR)
    }

    pub fn is_inconclusive(self) -> bool {
        matches!(self, Variant::InconclusiveEll | Variant::InconclusiveR | Variant::StaticKgR)
    }
}

/// A two-stage strategy with its derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspenseStrategy {
    pub variant: Variant,
    pub mu0: f64,
    pub t1: f64,
    pub t2: f64,
    /// Belief of the agents who stop at `t1`.
    pub stop_belief: f64,
    /// Probability of entering the targeting stage.
    pub continue_mass: f64,
    /// Belief at the start of the targeting stage.
    pub continue_belief: f64,
    /// Belief of the agents still waiting at `t2`.
    pub terminal_belief: f64,
    /// The time scale `A` of the inconclusive suspense paths.
    pub normalizer: Option<f64>,
    /// The inconclusive-l continuation probability `p_+`.
    pub p_plus: Option<f64>,
}

impl SuspenseStrategy {
    /// Builds the strategy, rejecting windows outside the variant's domain.
    pub fn new(spec: &BinaryPersuasionSpec, variant: Variant, t1: f64, t2: f64) -> Result<SuspenseStrategy> {
        spec.validate()?;
        let mu0 = spec.mu0;
        let what = format!("{variant:?}");
        if variant.is_static() && (t1 != 0.0 || t2 != 0.0) {
            return Err(Error::domain(what, "static variants have t1 = t2 = 0"));
        }
        if !(t1 >= 0.0 && t2 >= t1 && t2.is_finite()) {
            return Err(Error::domain(what, format!("need 0 <= t1 <= t2, got ({t1}, {t2})")));
        }
        let m = (t1 - t2).exp();
        let (stop, q, cont, a, p_plus) = match variant {
            Variant::SuspenseEll | Variant::StaticKgEll => {
                if t1 > mu0 {
                    return Err(Error::domain(what, format!("t1 = {t1} must not exceed mu0 = {mu0}")));
                }
                let q = 2.0 * mu0 - t1;
                (0.0, q, mu0 / q, None, None)
            }
            Variant::SuspenseR => {
                if t1 > mu0 {
                    return Err(Error::domain(what, format!("t1 = {t1} must not exceed mu0 = {mu0}")));
                }
                (1.0, 1.0 - t1, (mu0 - t1) / (1.0 - t1), None, None)
            }
            Variant::InconclusiveEll => {
                if 2.0 * m <= 1.0 {
                    return Err(Error::domain(what, "t2 - t1 must be below ln 2"));
                }
                let p = t1 / (2.0 * m - 1.0);
                if 2.0 * mu0 - t1 - p < 0.0 {
                    return Err(Error::domain(what, format!("p_+ = {p} leaves a negative stopping belief")));
                }
                let stop = 0.5 * (2.0 * mu0 - t1 - p) / (1.0 - p);
                let a = if t1 > 0.0 { Some(t1 * (0.5 - stop) / (mu0 - stop)) } else { None };
                (stop, p, m, a, Some(p))
            }
            Variant::InconclusiveR | Variant::StaticKgR => {
                if 2.0 * m <= 1.0 {
                    return Err(Error::domain(what, "t2 - t1 must be below ln 2"));
                }
                let q = (1.0 - 2.0 * mu0 + t1) / (2.0 * m - 1.0);
                if q > 1.0 + 1e-12 {
                    return Err(Error::domain(
                        what,
                        format!("continuation mass {q} exceeds one; t2 must not exceed {}", inconclusive_r_bound(mu0, t1)),
                    ));
                }
                let q = q.min(1.0);
                let cont = 1.0 - m;
                let stop = if q < 1.0 { (mu0 - q * cont) / (1.0 - q) } else { 1.0 };
                (stop, q, cont, None, None)
            }
        };
        let bound = targeting_bound(variant.revealed(), t1, cont);
        if t2 > bound + 1e-12 {
            return Err(Error::domain(
                what,
                format!("t2 = {t2} is beyond the targeting bound t1 - ln(continuing belief) = {bound}"),
            ));
        }
        let terminal = targeting_belief(variant.revealed(), cont, t2 - t1).clamp(0.0, 1.0);
        Ok(SuspenseStrategy {
            variant,
            mu0,
            t1,
            t2,
            stop_belief: stop,
            continue_mass: q,
            continue_belief: cont,
            terminal_belief: terminal,
            normalizer: a,
            p_plus,
        })
    }

    pub fn revealed(&self) -> Side {
        self.variant.revealed()
    }

    /// `(mu^L_t, mu^R_t)` during the suspense stage `[0, t1]`.
    pub fn suspense_paths(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=self.t1 + 1e-12).contains(&t) {
            return Err(Error::domain("suspense_paths", format!("t = {t} outside [0, {}]", self.t1)));
        }
        let (mu0, t1) = (self.mu0, self.t1);
        let (stop, cont) = (self.stop_belief, self.continue_belief);
        if t1 == 0.0 {
            return Ok(self.orient(stop, cont));
        }
        let pair = match self.variant {
            Variant::SuspenseEll | Variant::StaticKgEll => {
                (mu0 * (t1 - t) / t1, mu0 * (1.0 - t1 + t) / (2.0 * mu0 - t1))
            }
            Variant::SuspenseR => (
                ((1.0 + t - t1) * mu0 - t) / (1.0 - t1),
                (1.0 + t - (2.0 + t - t1) * mu0) / (1.0 + t1 - 2.0 * mu0),
            ),
            Variant::InconclusiveEll => {
                let a = self.normalizer.expect("inconclusive-l with t1 > 0 has a normaliser");
                let s = (t1 - t) / a;
                (stop + s * (0.5 - stop), cont - s * (cont - 0.5))
            }
            Variant::InconclusiveR | Variant::StaticKgR => {
                let s = t / t1;
                (mu0 + s * (cont - mu0), 0.5 + s * (stop - 0.5))
            }
        };
        Ok(pair)
    }

    fn orient(&self, stop: f64, cont: f64) -> (f64, f64) {
        match self.revealed() {
            Side::Ell => (stop, cont),
            Side::R => (cont, stop),
        }
    }

    /// Probability of being on the path that continues past `t1`, chosen so
    /// the mixture of the two paths has mean `mu0`.
    pub fn twist_weight(&self, t: f64) -> Result<f64> {
        let (l, r) = self.suspense_paths(t)?;
        let (stop, cont) = match self.revealed() {
            Side::Ell => (l, r),
            Side::R => (r, l),
        };
        if (cont - stop).abs() < 1e-15 {
            return Ok(if self.t1 == 0.0 { self.continue_mass } else { 0.0 });
        }
        Ok((self.mu0 - stop) / (cont - stop))
    }

    /// The continuing belief during targeting and the revelation hazard,
    /// which is one per unit time under a linear waiting cost.
    pub fn targeting(&self, t: f64) -> Result<(f64, f64)> {
        if !(self.t1 - 1e-12..=self.t2 + 1e-12).contains(&t) {
            return Err(Error::domain("targeting_path", format!("t = {t} outside [{}, {}]", self.t1, self.t2)));
        }
        Ok((targeting_belief(self.revealed(), self.continue_belief, t - self.t1), 1.0))
    }

    /// Probability of still waiting just after `t >= t1`.
    pub fn survival(&self, t: f64) -> f64 {
        if t < self.t1 {
            1.0
        } else if t >= self.t2 {
            0.0
        } else {
            self.continue_mass * (self.t1 - t).exp()
        }
    }

    /// `(P(tau <= t, a = revealed side), P(tau = t2, a = other side))` for
    /// `t` in `[t1, t2]`.
    pub fn joint_cdf(&self, t: f64) -> (f64, f64) {
        let t = t.clamp(self.t1, self.t2);
        let early = 1.0 - self.continue_mass * (self.t1 - t).exp();
        (early, self.continue_mass * (self.t1 - self.t2).exp())
    }

    /// Principal's expected payoff.
    pub fn payoff(&self, spec: &BinaryPersuasionSpec) -> f64 {
        let side = self.revealed();
        let (t1, t2, q) = (self.t1, self.t2, self.continue_mass);
        let stream = integrate(|t| (t1 - t).exp() * spec.payoff(side, t), t1, t2, QUAD_TOL);
        (1.0 - q) * spec.payoff(side, t1) + q * (stream + (t1 - t2).exp() * spec.payoff(side.other(), t2))
    }

    /// Expected agent payoff `E[max(mu, 1 - mu) - tau]`.
    pub fn agent_value(&self) -> f64 {
        let q = self.continue_mass;
        let (t1, t2) = (self.t1, self.t2);
        let u = |mu: f64, t: f64| mu.max(1.0 - mu) - t;
        let stream = integrate(|t| (t1 - t).exp() * (1.0 - t), t1, t2, QUAD_TOL);
        (1.0 - q) * u(self.stop_belief, t1) + q * (stream + (t1 - t2).exp() * u(self.terminal_belief, t2))
    }

    /// The scalar belief `mu` as `[1 - mu, mu]`.
    pub fn belief_vector(mu: f64) -> Vec<f64> {
        vec![1.0 - mu, mu]
    }
}

fn targeting_belief(side: Side, start: f64, elapsed: f64) -> f64 {
    match side {
        Side::Ell => start * elapsed.exp(),
        Side::R => 1.0 - (1.0 - start) * elapsed.exp(),
    }
}

/// Latest `t2` at which the continuing belief is still in `[0, 1]`.
fn targeting_bound(side: Side, t1: f64, start: f64) -> f64 {
    let room = match side {
        Side::Ell => start,
        Side::R => 1.0 - start,
    };
    if room <= 0.0 {
        f64::INFINITY
    } else {
        t1 - room.ln()
    }
}

fn inconclusive_r_bound(mu0: f64, t1: f64) -> f64 {
    t1 - (1.0 - mu0 + 0.5 * t1).ln()
}

/// Latest `t2` for a suspense (conclusive) strategy starting targeting at `t1`.
pub fn suspense_bound(spec: &BinaryPersuasionSpec, side: Side, t1: f64) -> f64 {
    let mu0 = spec.mu0;
    match side {
        Side::Ell => t1 + ((2.0 * mu0 - t1) / mu0).ln(),
        Side::R => t1 + ((1.0 - t1) / (1.0 - mu0)).ln(),
    }
}

pub fn suspense_paths(spec: &BinaryPersuasionSpec, variant: Variant, t1: f64, t2: f64, t: f64) -> Result<(f64, f64)> {
    SuspenseStrategy::new(spec, variant, t1, t2)?.suspense_paths(t)
}

/// Continuing belief at `t` during targeting. Conclusive variants do not
/// depend on `t2` except through the domain check.
pub fn targeting_path(spec: &BinaryPersuasionSpec, variant: Variant, t1: f64, t2: f64, t: f64) -> Result<f64> {
    SuspenseStrategy::new(spec, variant, t1, t2)?.targeting(t).map(|(mu, _)| mu)
}

/// `(P(tau <= t, a = l), P(tau = t2, a = r))` under Suspense-l.
pub fn joint_stopping_cdf(spec: &BinaryPersuasionSpec, t1: f64, t2: f64, t: f64) -> Result<(f64, f64)> {
    Ok(SuspenseStrategy::new(spec, Variant::SuspenseEll, t1, t2)?.joint_cdf(t))
}

pub fn payoff_suspense(spec: &BinaryPersuasionSpec, variant: Variant, t1: f64, t2: f64) -> Result<f64> {
    Ok(SuspenseStrategy::new(spec, variant, t1, t2)?.payoff(spec))
}

/// `Psi(t, t2) = int_t^t2 e^(t-s) h'_side(s) ds + e^(t-t2) h'_other(t2)` where
/// `side` is the revealed side (`l` for Suspense-l).
///
/// ```
/// use persuade::binary::{psi, BinaryPersuasionSpec, DelayGain, Side};
/// let id = DelayGain::Linear { slope: 1.0 };
/// let spec = BinaryPersuasionSpec::new(0.4, 0.0, 1.0, id.clone(), id).unwrap();
/// assert!((psi(&spec, Side::Ell, 0.3, 1.7) - 1.0).abs() < 1e-10);
/// ```
pub fn psi(spec: &BinaryPersuasionSpec, side: Side, t: f64, t2: f64) -> f64 {
    let (h_in, _) = spec.gain(side);
    let (h_out, _) = spec.gain(side.other());
    integrate(|s| (t - s).exp() * h_in.d1(s), t, t2, QUAD_TOL) + (t - t2).exp() * h_out.d1(t2)
}

/// Optimality residuals for a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocResiduals {
    /// Condition on `t2`; zero when it holds. At the terminal corner this is
    /// the distance to the admissible interval.
    pub res_a: f64,
    /// `Psi(t1, t2) - h'(t1)`; must be `>= 0`, and zero when `t1 > 0`.
    pub res_b: f64,
    /// `(h''(t1) * t1, curvature at t2)`; both must be `<= 0`.
    pub soc_local: (f64, f64),
    pub soc_global_ok: bool,
    pub certified: bool,
}

/// Residuals of the first- and second-order conditions for `variant` at
/// `(t1, t2)`, with verdicts at tolerance `tol`.
pub fn foc_residuals(spec: &BinaryPersuasionSpec, variant: Variant, t1: f64, t2: f64, tol: f64) -> FocResiduals {
    let side = variant.revealed();
    let (h_in, _) = spec.gain(side);
    let (h_out, _) = spec.gain(side.other());
    let concave = concave_on(spec, 0.0, spec.horizon(), tol);
    if variant.is_static() {
        let need = spec.h_r.d1(0.0).max(spec.h_ell.d1(0.0));
        let res_a = (need - spec.dv()).max(0.0);
        return FocResiduals {
            res_a,
            res_b: 0.0,
            soc_local: (0.0, 0.0),
            soc_global_ok: concave,
            certified: concave && res_a <= tol,
        };
    }
    // Flip signs so that the Suspense-r conditions read like the Suspense-l ones.
    let sign = match side {
        Side::Ell => 1.0,
        Side::R => -1.0,
    };
    let lhs = sign * (spec.dv() + spec.dh(t2));
    let p = psi(spec, side, t1, t2);
    let upper = h_out.d1(t2);
    let lower = upper - 2.0 * p;
    let at_corner = match variant {
        Variant::SuspenseEll | Variant::SuspenseR => (t2 - suspense_bound(spec, side, t1)).abs() < 1e-9,
        _ => false,
    };
    let res_a = if at_corner {
        if lhs > upper {
            lhs - upper
        } else if lhs < lower {
            lhs - lower
        } else {
            0.0
        }
    } else if variant.is_inconclusive() {
        lhs - lower
    } else {
        lhs - upper
    };
    let res_b = p - h_in.d1(t1);
    let soc_local = (h_in.d2(t1) * t1, h_out.d2(t2) - sign * spec.dh1(t2));
    let n = 400;
    let mut soc_global_ok = true;
    for k in 0..=n {
        let t = t2 * k as f64 / n as f64;
        let ok = if t < t1 {
            spec.h_ell.d2(t) <= tol && spec.h_r.d2(t) <= tol
        } else {
            h_out.d2(t).max(0.0) <= psi(spec, side, t, t2) - h_in.d1(t) + tol
        };
        if !ok {
            soc_global_ok = false;
            break;
        }
    }
    let b_ok = res_b >= -tol && (t1 <= 0.0 || res_b.abs() <= tol);
    let certified = res_a.abs() <= tol && b_ok && soc_local.0 <= tol && soc_local.1 <= tol && soc_global_ok;
    FocResiduals { res_a, res_b, soc_local, soc_global_ok, certified }
}

fn concave_on(spec: &BinaryPersuasionSpec, a: f64, b: f64, tol: f64) -> bool {
    (0..=2000).all(|k| {
        let t = a + (b - a) * k as f64 / 2000.0;
        spec.h_ell.d2(t) <= tol && spec.h_r.d2(t) <= tol
    })
}

/// Which branch of the case analysis produced a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCase {
    /// Window ends where the continuing belief becomes certain.
    Corner,
    /// Persuasion gain large enough for static disclosure.
    Static,
    /// Interior terminal time from the `t2` condition.
    Interior,
    /// Interior terminal time from the inconclusive `t2` condition.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyChoice {
    pub strategy: SuspenseStrategy,
    pub case: SelectionCase,
    pub residuals: FocResiduals,
    pub certified: bool,
    pub payoff: f64,
    /// When the delay gains coincide both directions are solved; the loser
    /// is kept here.
    pub alternative: Option<SuspenseStrategy>,
}

/// Picks the optimal generalized suspense strategy for concave delay gains
/// whose difference has a constant sign.
pub fn select_strategy(spec: &BinaryPersuasionSpec) -> Result<StrategyChoice> {
    spec.validate()?;
    let horizon = spec.horizon();
    if !concave_on(spec, 0.0, horizon, 1e-12) {
        return Err(Error::Refused(
            "delay gains are not concave on the horizon; no closed form applies, use the saddle solver".into(),
        ));
    }
    let mut pos = false;
    let mut neg = false;
    for k in 0..=2000 {
        let d = spec.dh1(horizon * k as f64 / 2000.0);
        pos |= d > 1e-12;
        neg |= d < -1e-12;
    }
    match (pos, neg) {
        (true, true) => Err(Error::Refused(
            "h_r' - h_l' changes sign on the horizon; no closed form applies, use the saddle solver".into(),
        )),
        (true, false) => select_side(spec, Side::Ell),
        (false, true) => select_side(spec, Side::R),
        (false, false) => {
            let ell = select_side(spec, Side::Ell)?;
            let r = select_side(spec, Side::R)?;
            let (mut win, lose) = if r.payoff > ell.payoff + 1e-12 { (r, ell) } else { (ell, r) };
            win.alternative = Some(lose.strategy);
            Ok(win)
        }
    }
}

fn select_side(spec: &BinaryPersuasionSpec, side: Side) -> Result<StrategyChoice> {
    let (h_in, _) = spec.gain(side);
    let (h_out, _) = spec.gain(side.other());
    let f = |t1: f64, t2: f64| psi(spec, side, t1, t2) - h_in.d1(t1);
    // Conclusive windows need t1 <= mu0; at mu0 the continuing belief is
    // already certain and targeting has zero length.
    let t1_star = |t2: f64| -> f64 {
        let cap = t2.min(spec.mu0);
        if f(0.0, t2) >= 0.0 {
            0.0
        } else {
            bisect(|t1| f(t1, t2), 0.0, cap, ROOT_TOL).unwrap_or(cap)
        }
    };
    let bound0 = suspense_bound(spec, side, 0.0);
    let t2_hat = bisect(|t2| suspense_bound(spec, side, t1_star(t2)) - t2, 0.0, bound0, ROOT_TOL).unwrap_or(bound0);
    let t1_hat = t1_star(t2_hat);
    // In the Suspense-l orientation: the t2 condition is dv' = a(t2).
    let sign = match side {
        Side::Ell => 1.0,
        Side::R => -1.0,
    };
    let dv = sign * spec.dv();
    let a = |t2: f64| h_out.d1(t2) - sign * spec.dh(t2);
    let upper = a(t2_hat);
    let lower = upper - 2.0 * psi(spec, side, t1_hat, t2_hat);
    let (conclusive, inconclusive, static_v) = match side {
        Side::Ell => (Variant::SuspenseEll, Variant::InconclusiveEll, Variant::StaticKgEll),
        Side::R => (Variant::SuspenseR, Variant::InconclusiveR, Variant::StaticKgR),
    };
    let (variant, t1, t2, case) = if dv >= lower && dv <= upper {
        (conclusive, t1_hat, t2_hat, SelectionCase::Corner)
    } else if dv > upper {
        if dv >= h_out.d1(0.0) {
            (static_v, 0.0, 0.0, SelectionCase::Static)
        } else {
            let t2 = bisect(|t2| a(t2) - dv, 0.0, t2_hat, ROOT_TOL)
                .ok_or_else(|| Error::NoConvergence { what: "t2 condition".into(), detail: "no bracket".into() })?;
            (conclusive, t1_star(t2), t2, SelectionCase::Interior)
        }
    } else if dv <= -h_out.d1(0.0) {
        (static_v, 0.0, 0.0, SelectionCase::Static)
    } else {
        let g = |t2: f64| a(t2) - 2.0 * psi(spec, side, t1_star(t2), t2) - dv;
        let t2 = bisect(g, 0.0, t2_hat, ROOT_TOL).ok_or_else(|| Error::NoConvergence {
            what: "inconclusive t2 condition".into(),
            detail: "no bracket".into(),
        })?;
        (inconclusive, t1_star(t2), t2, SelectionCase::Inconclusive)
    };
    let t2 = t2.min(suspense_bound(spec, side, t1));
    let t1 = t1.min(t2);
    let strategy = SuspenseStrategy::new(spec, variant, t1, t2)?;
    let residuals = foc_residuals(spec, variant, t1, t2, 1e-8);
    Ok(StrategyChoice {
        certified: residuals.certified,
        payoff: strategy.payoff(spec),
        strategy,
        case,
        residuals,
        alternative: None,
    })
}

/// Places the strategy on the grid `0, dt, ..., K dt` with `K dt` the
/// first grid time at or after `t2`.
pub fn export_grid_distribution(
    spec: &BinaryPersuasionSpec,
    strat: &SuspenseStrategy,
    dt: f64,
) -> Result<BeliefTimeDistribution> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "grid step must be positive"));
    }
    let k = ((strat.t2 / dt) - 1e-9).ceil().max(1.0) as usize;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 * dt).collect();
    export_on_grid(spec, strat, &times)
}

/// Places the strategy on an arbitrary increasing grid starting at 0,
/// snapping `t1` and `t2` to the nearest grid times.
///
/// Atoms: the `t1` stoppers, the revealed vertex at each grid time in
/// `(t1, t2]` with the mass the continuous strategy reveals since the
/// previous grid time, and the remaining mass at the continuing belief at
/// `t2`. The continuing belief at every grid time is exactly the
/// continuous targeting path.
pub fn export_on_grid(
    spec: &BinaryPersuasionSpec,
    strat: &SuspenseStrategy,
    times: &[f64],
) -> Result<BeliefTimeDistribution> {
    if times.is_empty() || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("times", "grid must start at 0 and increase"));
    }
    let nearest = |t: f64| {
        times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    let k1 = nearest(strat.t1);
    let mut k2 = nearest(strat.t2).max(k1);
    let snapped = loop {
        match SuspenseStrategy::new(spec, strat.variant, times[k1], times[k2]) {
            Ok(s) => break s,
            Err(e) if k2 > k1 => {
                let _ = e;
                k2 -= 1;
            }
            Err(e) => return Err(e),
        }
    };
    let s = &snapped;
    let side = s.revealed();
    let vec = SuspenseStrategy::belief_vector;
    let mut atoms = Vec::new();
    let mut push = |belief: f64, time: usize, weight: f64| {
        if weight > 0.0 {
            atoms.push(Atom { belief: vec(belief), time, weight });
        }
    };
    push(s.stop_belief, k1, 1.0 - s.continue_mass);
    for k in k1 + 1..=k2 {
        let prev = s.continue_mass * (s.t1 - times[k - 1]).exp();
        let now = s.continue_mass * (s.t1 - times[k]).exp();
        push(side.vertex(), k, prev - now);
    }
    let tail = s.continue_mass * (s.t1 - s.t2).exp();
    push(s.terminal_belief, k2, tail);
    Ok(BeliefTimeDistribution::new(times.to_vec(), atoms))
}
