//! Affine maps `x -> A x + B`, their forward and backward iterations, the
//! perpetuities `R_inf` and `R_inf^(-1)`, and the super/sub/critical
//! classification of an environment.
//!
//! Running products are kept as logarithms; see [`PathState`].

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, EnvVariant};
use crate::error::{Error, Result};
use crate::lf::LinearFractional;
use crate::numeric::{log_add_exp, mean_and_stderr};
use crate::rng;
use crate::tolerance::Tolerances;

/// One environment realization `(A, B)`: the offspring law `LF(A, B)` and the
/// affine map `x -> A x + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PairParams", into = "PairParams")]
pub struct EnvPair {
    a: f64,
    b: f64,
}

#[derive(Serialize, Deserialize)]
struct PairParams {
    a: f64,
    b: f64,
}

impl TryFrom<PairParams> for EnvPair {
    type Error = Error;
    fn try_from(p: PairParams) -> Result<Self> {
        EnvPair::new(p.a, p.b)
    }
}

impl From<EnvPair> for PairParams {
    fn from(p: EnvPair) -> Self {
        PairParams { a: p.a, b: p.b }
    }
}

impl EnvPair {
    /// `A > 0`, `B >= 0` and `A + B >= 1`. `B = 0` is only possible for
    /// `A >= 1`; `(1, 0)` is the point mass at one.
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "A",
                value: a,
                reason: "must be positive and finite",
            });
        }
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "B",
                value: b,
                reason: "must be nonnegative and finite",
            });
        }
        if a + b < 1.0 - Tolerances::DEFAULT.unit_mass_slack {
            return Err(Error::InvalidParameter {
                name: "A+B",
                value: a + b,
                reason: "A + B must be at least 1",
            });
        }
        Ok(Self { a, b })
    }

    /// For pairs drawn from an already validated specification.
    pub(crate) fn new_unchecked(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `C = A + B`.
    pub fn c(&self) -> f64 {
        self.a + self.b
    }

    pub fn to_lf(&self) -> LinearFractional {
        LinearFractional::new(self.a, self.b.max(0.0))
            .or_else(|_| LinearFractional::from_log_params(self.a.ln(), self.b.ln()))
            .expect("environment pairs are valid offspring laws")
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

/// Running quantities along an environment path after `n` steps:
/// `Pi_n = A_1...A_n`, `R_n = sum Pi_{k-1} B_k` and
/// `R_n^(-1) = sum Pi_k^{-1} B_k`, all stored as logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    n: usize,
    ln_pi: f64,
    ln_r: f64,
    ln_rdual: f64,
}

#[derive(Serialize)]
struct PathStateView {
    n: usize,
    log_pi: f64,
    s: f64,
    r: f64,
    rdual: f64,
}

impl Serialize for PathState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PathStateView {
            n: self.n,
            log_pi: self.ln_pi,
            s: self.s(),
            r: self.r(),
            rdual: self.rdual(),
        }
        .serialize(s)
    }
}

impl Default for PathState {
    fn default() -> Self {
        Self::initial()
    }
}

impl PathState {
    pub fn initial() -> Self {
        Self {
            n: 0,
            ln_pi: 0.0,
            ln_r: f64::NEG_INFINITY,
            ln_rdual: f64::NEG_INFINITY,
        }
    }

    pub fn step(&self, pair: &EnvPair) -> Self {
        let ln_b = pair.b.ln();
        let ln_pi = self.ln_pi + pair.a.ln();
        Self {
            n: self.n + 1,
            ln_pi,
            ln_r: log_add_exp(self.ln_r, self.ln_pi + ln_b),
            ln_rdual: log_add_exp(self.ln_rdual, ln_b - ln_pi),
        }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a EnvPair>) -> Self {
        pairs
            .into_iter()
            .fold(Self::initial(), |st, pair| st.step(pair))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `log Pi_n`.
    pub fn log_pi(&self) -> f64 {
        self.ln_pi
    }

    /// `S_n = -log Pi_n`.
    pub fn s(&self) -> f64 {
        -self.ln_pi
    }

    pub fn pi(&self) -> f64 {
        self.ln_pi.exp()
    }

    pub fn r(&self) -> f64 {
        self.ln_r.exp()
    }

    pub fn rdual(&self) -> f64 {
        self.ln_rdual.exp()
    }

    pub fn ln_r(&self) -> f64 {
        self.ln_r
    }

    pub fn ln_rdual(&self) -> f64 {
        self.ln_rdual
    }

    /// `ln(Pi_n + R_n)`, minus the log of the quenched survival probability.
    pub fn ln_pi_plus_r(&self) -> f64 {
        log_add_exp(self.ln_pi, self.ln_r)
    }

    /// `M_n = R_n / Pi_n`.
    pub fn m(&self) -> f64 {
        (self.ln_r - self.ln_pi).exp()
    }

    /// `g_{1:n}(x) = Pi_n x + R_n`.
    pub fn backward_eval(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        log_add_exp(self.ln_pi + x.ln(), self.ln_r).exp()
    }
}

/// State of the reversed path `e_n, ..., e_1`. Its `R / Pi` equals the
/// forward `R^(-1)` and vice versa.
pub fn dual_path(pairs: &[EnvPair]) -> PathState {
    PathState::from_pairs(pairs.iter().rev())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Bound on the conditional mean of the remainder.
    MeanLevel,
    /// No bound available; stopped once the next expected increment fell
    /// below the tolerance.
    Heuristic,
}

/// Truncated perpetuity: `value` is the partial sum reached, a lower bound of
/// the limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerpetuityEstimate {
    pub value: f64,
    pub error_bound: Option<f64>,
    pub bound_kind: BoundKind,
    pub steps: usize,
    pub state: PathState,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "eps",
            value: eps,
            reason: "must be positive",
        })
    }
}

/// Extends `state` with pairs drawn from `env` until the mean remainder
/// `Pi_n E[B] / (1 - E[A])` of `R_inf - R_n` drops below `eps`.
/// When `E[A] >= 1` the stopping rule falls back to `Pi_n E[B] < eps` and no
/// bound is reported.
pub fn perpetuity_tail<R: Rng + ?Sized>(
    state: &PathState,
    env: &EnvSpec,
    eps: f64,
    n_max: usize,
    rng: &mut R,
) -> Result<PerpetuityEstimate> {
    check_eps(eps)?;
    let class = classify(env)?;
    if class.label != Label::C1 {
        return Err(Error::DivergentPerpetuity(format!(
            "environment is {} {}",
            class.sub_case, class.criticality
        )));
    }
    let mean_a = env.mean_a();
    let (factor, kind) = if mean_a < 1.0 {
        (env.mean_b() / (1.0 - mean_a), BoundKind::MeanLevel)
    } else {
        (env.mean_b(), BoundKind::Heuristic)
    };
    run_tail(state, env, eps, n_max, rng, kind, |st| {
        (st.log_pi().exp() * factor, st.r())
    })
}

/// Dual counterpart of [`perpetuity_tail`] for `R_inf^(-1)`, the perpetuity
/// of the pairs `(1/A, B/A)`; requires a subcritical environment.
pub fn dual_perpetuity_tail<R: Rng + ?Sized>(
    state: &PathState,
    env: &EnvSpec,
    eps: f64,
    n_max: usize,
    rng: &mut R,
) -> Result<PerpetuityEstimate> {
    check_eps(eps)?;
    let class = classify(env)?;
    if class.label != Label::C2 {
        return Err(Error::DivergentPerpetuity(format!(
            "dual perpetuity needs a subcritical environment, got {} {}",
            class.sub_case, class.criticality
        )));
    }
    let mean_inv_a = env.kappa()?.exp();
    let (factor, kind) = if mean_inv_a < 1.0 {
        (env.mean_b_over_a() / (1.0 - mean_inv_a), BoundKind::MeanLevel)
    } else {
        (env.mean_b_over_a(), BoundKind::Heuristic)
    };
    run_tail(state, env, eps, n_max, rng, kind, |st| {
        ((-st.log_pi()).exp() * factor, st.rdual())
    })
}

fn run_tail<R: Rng + ?Sized>(
    state: &PathState,
    env: &EnvSpec,
    eps: f64,
    n_max: usize,
    rng: &mut R,
    kind: BoundKind,
    remainder: impl Fn(&PathState) -> (f64, f64),
) -> Result<PerpetuityEstimate> {
    let mut st = *state;
    for steps in 0..=n_max {
        let (rem, value) = remainder(&st);
        if rem < eps {
            return Ok(PerpetuityEstimate {
                value,
                error_bound: (kind == BoundKind::MeanLevel).then_some(rem),
                bound_kind: kind,
                steps,
                state: st,
            });
        }
        if steps < n_max {
            st = st.step(&env.sample_pair(rng));
        }
    }
    Err(Error::BudgetExceeded { n_max, eps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmSide {
    /// `I-` over the law of `log B`, with `J-(x) = E min(x, log^- A)`.
    Minus,
    /// `I+` over the law of `log(B/A)`, with `J+(x) = E min(x, log^+ A)`.
    Plus,
}

/// `I = E[ log X / J(X); X >= 1 ]` for the Goldie-Maller conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmIntegral {
    /// `f64::INFINITY` when the integral diverges.
    pub value: f64,
    pub stderr: f64,
    pub exact: bool,
}

impl GmIntegral {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }

    fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            exact: true,
        }
    }
}

pub fn gm_integral(env: &EnvSpec, side: GmSide) -> Result<GmIntegral> {
    gm_integral_with(env, side, &Tolerances::DEFAULT, 0)
}

/// Exact for discretely supported environments and for log-normal `A` with
/// constant `B` on the minus side; stratified Monte Carlo otherwise.
pub fn gm_integral_with(
    env: &EnvSpec,
    side: GmSide,
    tol: &Tolerances,
    seed: u64,
) -> Result<GmIntegral> {
    if let Some(atoms) = env.atoms() {
        let j = |x: f64| -> f64 {
            atoms
                .iter()
                .map(|at| {
                    let l = match side {
                        GmSide::Minus => (-at.a.ln()).max(0.0),
                        GmSide::Plus => at.a.ln().max(0.0),
                    };
                    at.weight * x.min(l)
                })
                .sum()
        };
        if j(f64::MAX) == 0.0 {
            return Ok(GmIntegral::exact(f64::INFINITY));
        }
        let mut total = 0.0;
        for at in &atoms {
            let x = match side {
                GmSide::Minus => at.b.ln(),
                GmSide::Plus => (at.b / at.a).ln(),
            };
            if x >= 1.0 {
                total += at.weight * x.ln() / j(x);
            }
        }
        return Ok(GmIntegral::exact(total));
    }

    let law = env.log_normal_law().expect("non-discrete environments are log-normal");
    let EnvVariant::LogNormalA { b_rule, .. } = env.variant else {
        unreachable!()
    };
    let j = |x: f64| match side {
        GmSide::Minus => law.j_minus(x),
        GmSide::Plus => law.j_plus(x),
    };
    // a truncated law has A < 1 a.s., so log^+ A = 0
    if side == GmSide::Plus && law.truncated {
        return Ok(GmIntegral::exact(f64::INFINITY));
    }
    let integrand = |x: f64| if x >= 1.0 { x.ln() / j(x) } else { 0.0 };
    use crate::env::BRule;
    let x_of = |y: f64| -> f64 {
        match (b_rule, side) {
            (BRule::Constant { b }, GmSide::Minus) => b.ln(),
            (BRule::Constant { b }, GmSide::Plus) => b.ln() - y,
            (BRule::Line { x }, GmSide::Minus) => x.ln() + (-y.exp()).ln_1p(),
            (BRule::Line { x }, GmSide::Plus) => x.ln() + (-y.exp()).ln_1p() - y,
        }
    };
    if let (BRule::Constant { b }, GmSide::Minus) = (b_rule, side) {
        return Ok(GmIntegral::exact(integrand(b.ln())));
    }

    let draws = tol.integral_draws.max(2);
    let tag = match side {
        GmSide::Minus => "gm-minus",
        GmSide::Plus => "gm-plus",
    };
    let mut stream = rng::stream(seed, tag, 0);
    let values: Vec<f64> = (0..draws)
        .map(|i| {
            let u = (i as f64 + stream.random::<f64>()) / draws as f64;
            integrand(x_of(law.quantile(u)))
        })
        .collect();
    let (mean, stderr) = mean_and_stderr(&values);
    if !mean.is_finite() || mean > tol.integral_cap {
        return Ok(GmIntegral {
            value: f64::INFINITY,
            stderr,
            exact: false,
        });
    }
    if mean > 0.0 && stderr / mean > tol.max_rel_stderr {
        return Err(Error::Unclassifiable(format!(
            "Goldie-Maller integral estimate {mean} has relative standard error {}",
            stderr / mean
        )));
    }
    Ok(GmIntegral {
        value: mean,
        stderr,
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    C1,
    C2,
    C3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubCase {
    #[serde(rename = "C1.1")]
    C1_1,
    #[serde(rename = "C1.2")]
    C1_2,
    #[serde(rename = "C2.1")]
    C2_1,
    #[serde(rename = "C2.2")]
    C2_2,
    #[serde(rename = "C3.1")]
    C3_1,
    #[serde(rename = "C3.2")]
    C3_2,
    #[serde(rename = "C3.3")]
    C3_3,
    #[serde(rename = "C3.4")]
    C3_4,
}

impl SubCase {
    pub fn label(&self) -> Label {
        match self {
            SubCase::C1_1 | SubCase::C1_2 => Label::C1,
            SubCase::C2_1 | SubCase::C2_2 => Label::C2,
            _ => Label::C3,
        }
    }

    pub fn criticality(&self) -> Criticality {
        match self.label() {
            Label::C1 => Criticality::Supercritical,
            Label::C2 => Criticality::Subcritical,
            Label::C3 if *self == SubCase::C3_4 => Criticality::StronglyCritical,
            Label::C3 => Criticality::Critical,
        }
    }
}

impl fmt::Display for SubCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SubCase::C1_1 => "C1.1",
            SubCase::C1_2 => "C1.2",
            SubCase::C2_1 => "C2.1",
            SubCase::C2_2 => "C2.2",
            SubCase::C3_1 => "C3.1",
            SubCase::C3_2 => "C3.2",
            SubCase::C3_3 => "C3.3",
            SubCase::C3_4 => "C3.4",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    Supercritical,
    Subcritical,
    Critical,
    StronglyCritical,
}

impl fmt::Display for Criticality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criticality::Supercritical => "supercritical",
            Criticality::Subcritical => "subcritical",
            Criticality::Critical => "critical",
            Criticality::StronglyCritical => "strongly critical",
        })
    }
}

/// What the classifier looked at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// Signed fixed point of a degenerate line `A x + B = x`.
    pub line_x: Option<f64>,
    pub a_is_one: bool,
    pub mean_log_a: Option<f64>,
    pub i_minus: Option<GmIntegral>,
    pub i_plus: Option<GmIntegral>,
    /// False when any ingredient came from Monte Carlo.
    pub exact: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trichotomy {
    pub label: Label,
    pub sub_case: SubCase,
    pub criticality: Criticality,
    pub evidence: Evidence,
}

impl Trichotomy {
    fn new(sub_case: SubCase, evidence: Evidence) -> Self {
        Self {
            label: sub_case.label(),
            sub_case,
            criticality: sub_case.criticality(),
            evidence,
        }
    }
}

pub fn classify(env: &EnvSpec) -> Result<Trichotomy> {
    classify_with(env, &Tolerances::DEFAULT, 0)
}

/// Decision tree: degenerate lines first, then `A = 1`, then the drift
/// `E log A` of `log Pi_n`, then finiteness of `I-` or `I+`.
pub fn classify_with(env: &EnvSpec, tol: &Tolerances, seed: u64) -> Result<Trichotomy> {
    let mut ev = Evidence {
        line_x: None,
        a_is_one: false,
        mean_log_a: None,
        i_minus: None,
        i_plus: None,
        exact: true,
        notes: Vec::new(),
    };

    if env.a_is_one() {
        ev.a_is_one = true;
        ev.mean_log_a = Some(0.0);
        if env.mean_b() == 0.0 {
            ev.notes
                .push("A = 1 and B = 0: every individual has exactly one child".into());
        }
        return Ok(Trichotomy::new(SubCase::C3_4, ev));
    }

    if let Some(x) = env.degenerate_line(tol) {
        ev.line_x = Some(x);
        ev.mean_log_a = Some(env.mean_log_a());
        let sub_case = if x > 0.0 {
            ev.notes.push(format!("B = {x}(1 - A) a.s., R_inf = {x}"));
            SubCase::C1_2
        } else {
            ev.notes
                .push(format!("B = {}(A - 1) a.s., dual perpetuity = {}", -x, -x));
            SubCase::C2_2
        };
        return Ok(Trichotomy::new(sub_case, ev));
    }

    let drift = env.mean_log_a();
    if !drift.is_finite() {
        ev.notes.push("E log A is not finite".into());
        return Err(Error::Unclassifiable(format!(
            "E log A = {drift}; drift of log Pi_n undetermined"
        )));
    }
    ev.mean_log_a = Some(drift);
    let band = tol.exact_zero * env.mean_abs_log_a().max(f64::MIN_POSITIVE);
    if drift.abs() <= band {
        ev.notes
            .push("E log A = 0: Pi_n oscillates between 0 and infinity".into());
        return Ok(Trichotomy::new(SubCase::C3_3, ev));
    }
    let sub_case = if drift < 0.0 {
        let i = gm_integral_with(env, GmSide::Minus, tol, seed)?;
        ev.exact &= i.exact;
        ev.i_minus = Some(i);
        if i.is_finite() {
            SubCase::C1_1
        } else {
            SubCase::C3_1
        }
    } else {
        let i = gm_integral_with(env, GmSide::Plus, tol, seed)?;
        ev.exact &= i.exact;
        ev.i_plus = Some(i);
        if i.is_finite() {
            SubCase::C2_1
        } else {
            SubCase::C3_2
        }
    };
    Ok(Trichotomy::new(sub_case, ev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BRule, LineSign};

    fn pair(a: f64, b: f64) -> EnvPair {
        EnvPair::new(a, b).unwrap()
    }

    fn close(x: f64, y: f64, tol: f64) -> bool {
        (x - y).abs() <= tol * (1.0 + y.abs())
    }

    #[test]
    fn pair_validation() {
        assert!(EnvPair::new(0.5, 0.5).is_ok());
        assert!(EnvPair::new(1.0, 0.0).is_ok());
        assert!(EnvPair::new(0.5, 0.4).is_err());
        assert!(EnvPair::new(0.0, 2.0).is_err());
        assert!(EnvPair::new(1.0, -0.1).is_err());
        assert!(serde_json::from_str::<EnvPair>(r#"{"a":0.2,"b":0.2}"#).is_err());
        let p: EnvPair = serde_json::from_str(r#"{"a":2.0,"b":1.0}"#).unwrap();
        assert_eq!(p, pair(2.0, 1.0));
    }

    #[test]
    fn three_doubling_steps() {
        let st = PathState::from_pairs(&[pair(2.0, 1.0); 3]);
        assert_eq!(st.n(), 3);
        assert!(close(st.log_pi(), 8f64.ln(), 1e-15));
        assert!(close(st.r(), 7.0, 1e-14));
        assert!(close(st.rdual(), 7.0 / 8.0, 1e-14));
        assert!(close(st.s(), -8f64.ln(), 1e-15));
        assert!(close(st.backward_eval(0.0), 7.0, 1e-14));
        assert!(close(st.backward_eval(1.0), 15.0, 1e-14));
    }

    #[test]
    fn unit_mean_steps_form_a_walk() {
        let st = PathState::from_pairs(&[pair(1.0, 1.0); 25]);
        assert!(close(st.r(), 25.0, 1e-14));
        assert!(close(st.rdual(), 25.0, 1e-14));
    }

    #[test]
    fn empty_composition_is_identity() {
        let st = PathState::initial();
        assert_eq!(st.backward_eval(3.5), 3.5);
        assert_eq!(st.r(), 0.0);
        assert_eq!(st.rdual(), 0.0);
    }

    #[test]
    fn duality_on_two_pairs() {
        let pairs = [pair(2.0, 1.0), pair(4.0, 1.0)];
        let fw = PathState::from_pairs(&pairs);
        let rev = dual_path(&pairs);
        assert!(close(fw.rdual(), 5.0 / 8.0, 1e-15));
        assert!(close(rev.m(), 5.0 / 8.0, 1e-15));
        let one = PathState::from_pairs(&pairs[..1]);
        assert!(close(one.rdual(), one.m(), 1e-15));
    }

    #[test]
    fn huge_paths_stay_finite_in_logs() {
        let st = PathState::from_pairs(&vec![pair(2.0, 1.0); 5000]);
        assert!(close(st.log_pi(), 5000.0 * 2f64.ln(), 1e-12));
        assert!(close(st.ln_r(), 5000.0 * 2f64.ln(), 1e-12));
        assert!(close(st.rdual(), 1.0, 1e-12));
    }

    #[test]
    fn perpetuity_of_pure_geometric_constant() {
        let env = EnvSpec::constant(0.5, 0.5).unwrap();
        let mut r = rng::stream(1, "test", 0);
        let est = perpetuity_tail(&PathState::initial(), &env, 1e-13, 200, &mut r).unwrap();
        assert!(close(est.value, 1.0, 1e-12));
        assert_eq!(est.bound_kind, BoundKind::MeanLevel);
        assert!(est.error_bound.unwrap() < 1e-13);
        assert!(est.value + est.error_bound.unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn perpetuity_of_degenerate_line_is_the_fixed_point() {
        let env = EnvSpec::line(2.0, LineSign::Plus, &[(0.25, 0.5), (0.5, 0.5)]).unwrap();
        let mut r = rng::stream(2, "test", 0);
        let est = perpetuity_tail(&PathState::initial(), &env, 1e-12, 10_000, &mut r).unwrap();
        assert!((est.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn perpetuity_rejects_subcritical() {
        let env = EnvSpec::constant(2.0, 1.0).unwrap();
        let mut r = rng::stream(3, "test", 0);
        let err = perpetuity_tail(&PathState::initial(), &env, 1e-9, 100, &mut r).unwrap_err();
        assert!(matches!(err, Error::DivergentPerpetuity(_)));
    }

    #[test]
    fn perpetuity_budget() {
        let env = EnvSpec::constant(0.9, 1.0).unwrap();
        let mut r = rng::stream(4, "test", 0);
        let err = perpetuity_tail(&PathState::initial(), &env, 1e-12, 5, &mut r).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { n_max: 5, .. }));
    }

    #[test]
    fn dual_perpetuity_of_doubling_constant() {
        let env = EnvSpec::constant(2.0, 1.0).unwrap();
        let mut r = rng::stream(5, "test", 0);
        let est = dual_perpetuity_tail(&PathState::initial(), &env, 1e-13, 200, &mut r).unwrap();
        assert!(close(est.value, 1.0, 1e-12));
    }

    #[test]
    fn gm_integrals_on_constants() {
        let geo = EnvSpec::constant(0.5, 0.5).unwrap();
        assert_eq!(gm_integral(&geo, GmSide::Minus).unwrap().value, 0.0);
        let sub = EnvSpec::constant(2.0, 1.0).unwrap();
        assert_eq!(gm_integral(&sub, GmSide::Plus).unwrap().value, 0.0);
        let walk = EnvSpec::table(&[(1.0, 1.0, 0.5), (1.0, 30.0, 0.5)]).unwrap();
        assert!(!gm_integral(&walk, GmSide::Minus).unwrap().is_finite());
    }

    #[test]
    fn gm_integral_discrete_by_hand() {
        // log B = 3 on one atom, J-(3) = 0.5 min(3, log 2) + 0.5 * 0
        let env = EnvSpec::table(&[(0.5, 3f64.exp(), 0.5), (1.5, 1.0, 0.5)]).unwrap();
        let i = gm_integral(&env, GmSide::Minus).unwrap();
        let expect = 0.5 * 3f64.ln() / (0.5 * 2f64.ln());
        assert!(close(i.value, expect, 1e-14));
    }

    #[test]
    fn gm_integral_log_normal_plus_is_stable() {
        let env = EnvSpec::log_normal(0.3, 0.5, BRule::Constant { b: 20.0 }).unwrap();
        let i = gm_integral_with(&env, GmSide::Plus, &Tolerances::DEFAULT, 9).unwrap();
        assert!(!i.exact && i.is_finite() && i.value > 0.0);
        assert!(i.stderr / i.value < 0.05);
        let j = gm_integral_with(&env, GmSide::Plus, &Tolerances::DEFAULT, 9).unwrap();
        assert_eq!(i, j);
    }

    fn sub_case(env: &EnvSpec) -> SubCase {
        classify(env).unwrap().sub_case
    }

    #[test]
    fn classification_examples() {
        let t = classify(&EnvSpec::constant(0.5, 0.5).unwrap()).unwrap();
        assert_eq!(t.sub_case, SubCase::C1_2);
        assert_eq!(t.criticality, Criticality::Supercritical);
        let t = classify(&EnvSpec::constant(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(t.sub_case, SubCase::C3_4);
        assert_eq!(t.criticality, Criticality::StronglyCritical);
        // a constant pair always lies on a line: (2, 1) has B = 1(A - 1)
        let t = classify(&EnvSpec::constant(2.0, 1.0).unwrap()).unwrap();
        assert_eq!(t.sub_case, SubCase::C2_2);
        assert_eq!(t.criticality, Criticality::Subcritical);
        let sub = EnvSpec::table(&[(2.0, 1.0, 0.5), (4.0, 1.0, 0.5)]).unwrap();
        assert_eq!(sub_case(&sub), SubCase::C2_1);
        let sup = EnvSpec::table(&[(0.5, 1.0, 0.5), (0.25, 1.0, 0.5)]).unwrap();
        assert_eq!(sub_case(&sup), SubCase::C1_1);
        let crit = EnvSpec::table(&[(2.0, 1.0, 0.5), (0.5, 1.0, 0.5)]).unwrap();
        assert_eq!(sub_case(&crit), SubCase::C3_3);
        let delta = classify(&EnvSpec::constant(1.0, 0.0).unwrap()).unwrap();
        assert_eq!(delta.sub_case, SubCase::C3_4);
        assert!(!delta.evidence.notes.is_empty());
    }

    #[test]
    fn classification_ignores_atom_order_and_duplicates() {
        let a = EnvSpec::table(&[(2.0, 1.0, 0.5), (0.25, 1.0, 0.5)]).unwrap();
        let b = EnvSpec::table(&[(0.25, 1.0, 0.25), (2.0, 1.0, 0.5), (0.25, 1.0, 0.25)]).unwrap();
        assert_eq!(classify(&a).unwrap(), classify(&b).unwrap());
    }

    #[test]
    fn sub_case_json_names() {
        let t = classify(&EnvSpec::constant(0.5, 0.5).unwrap()).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["sub_case"], "C1.2");
        assert_eq!(v["label"], "C1");
        assert_eq!(v["criticality"], "supercritical");
    }
}
