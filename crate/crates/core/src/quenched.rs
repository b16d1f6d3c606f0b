//! Closed-form quenched laws along a fixed environment path.
//!
//! Everything here is a function of `Pi_n`, `R_n` and `R_n^(-1)` of the path
//! or of one of its segments. "Reversed" quantities refer to the process
//! driven by `e_n, ..., e_1` instead of `e_1, ..., e_n`.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{dual_perpetuity_tail, perpetuity_tail, EnvPair, PathState, PerpetuityEstimate};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::lf::{GeomPlus, LfMixture, LinearFractional};
use crate::numeric::log_add_exp;
use crate::tolerance::Tolerances;

/// A finite environment path `e_1, ..., e_n` with cached prefix states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<EnvPair>", into = "Vec<EnvPair>")]
pub struct EnvPath {
    pairs: Vec<EnvPair>,
    states: Vec<PathState>,
}

impl From<Vec<EnvPair>> for EnvPath {
    fn from(pairs: Vec<EnvPair>) -> Self {
        EnvPath::new(pairs)
    }
}

impl From<EnvPath> for Vec<EnvPair> {
    fn from(path: EnvPath) -> Self {
        path.pairs
    }
}

impl EnvPath {
    pub fn new(pairs: Vec<EnvPair>) -> Self {
        let mut states = Vec::with_capacity(pairs.len() + 1);
        states.push(PathState::initial());
        for pair in &pairs {
            let next = states.last().unwrap().step(pair);
            states.push(next);
        }
        Self { pairs, states }
    }

    pub fn constant(pair: EnvPair, n: usize) -> Self {
        Self::new(vec![pair; n])
    }

    /// `n` i.i.d. pairs drawn from `env`.
    pub fn sample<R: Rng + ?Sized>(env: &EnvSpec, n: usize, rng: &mut R) -> Self {
        Self::new((0..n).map(|_| env.sample_pair(rng)).collect())
    }

    pub fn push(&mut self, pair: EnvPair) {
        let next = self.states.last().unwrap().step(&pair);
        self.pairs.push(pair);
        self.states.push(next);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[EnvPair] {
        &self.pairs
    }

    /// `e_k`, one-based.
    pub fn pair(&self, k: usize) -> Result<EnvPair> {
        if k == 0 || k > self.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                limit: self.len(),
            });
        }
        Ok(self.pairs[k - 1])
    }

    fn check(&self, n: usize) -> Result<()> {
        if n > self.len() {
            Err(Error::IndexOutOfRange {
                index: n,
                limit: self.len(),
            })
        } else {
            Ok(())
        }
    }

    /// State after the first `n` steps.
    pub fn state(&self, n: usize) -> Result<&PathState> {
        self.check(n)?;
        Ok(&self.states[n])
    }

    pub fn last_state(&self) -> &PathState {
        self.states.last().unwrap()
    }

    /// State of the segment `e_{l+1}, ..., e_m` started afresh.
    pub fn segment_state(&self, l: usize, m: usize) -> Result<PathState> {
        self.check(m)?;
        if l > m {
            return Err(Error::IndexOutOfRange { index: l, limit: m });
        }
        Ok(PathState::from_pairs(&self.pairs[l..m]))
    }

    /// `e_n, ..., e_1`.
    pub fn reversed_prefix(&self, n: usize) -> Result<EnvPath> {
        self.check(n)?;
        Ok(EnvPath::new(self.pairs[..n].iter().rev().copied().collect()))
    }

    pub fn reversed(&self) -> EnvPath {
        EnvPath::new(self.pairs.iter().rev().copied().collect())
    }

    /// One `{"a":..,"b":..}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for pair in &self.pairs {
            serde_json::to_writer(&mut w, pair)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            pairs.push(serde_json::from_str(&line)?);
        }
        Ok(Self::new(pairs))
    }
}

/// Quenched quantities at generation `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuenchedSnapshot {
    pub n: usize,
    /// `LF(Pi_n, R_n)`.
    pub law_zn: LinearFractional,
    /// `P(Z_n = 0 | e) = 1 - 1/(Pi_n + R_n)`.
    pub q_n: f64,
    pub survival: f64,
    /// Law of `Z_n` given `Z_n > 0`: `Geom+(1/(1 + M_n))`.
    pub cond_survival: GeomPlus,
    /// `LF(Pi_n, Pi_n R_n^(-1))`.
    pub reversed_law_zn: LinearFractional,
    pub reversed_q_n: f64,
    /// `Geom+(1/(1 + R_n^(-1)))`.
    pub reversed_cond_survival: GeomPlus,
    /// `M_n = R_n / Pi_n`.
    pub m_n: f64,
    pub log_pi: f64,
    pub r: f64,
    pub rdual: f64,
}

/// `Geom+(e^{ln_p})` with the parameter clamped into `(0, 1]`.
fn geom_from_ln(ln_p: f64) -> GeomPlus {
    GeomPlus::new(ln_p.exp().clamp(f64::MIN_POSITIVE, 1.0)).expect("clamped parameter")
}

/// `1 - e^{ln_x}` for `ln_x <= 0`.
fn one_minus_exp(ln_x: f64) -> f64 {
    // adding zero turns -0 into +0
    -ln_x.min(0.0).exp_m1() + 0.0
}

impl QuenchedSnapshot {
    pub fn from_state(st: &PathState) -> Self {
        let ln_total = st.ln_pi_plus_r().max(0.0);
        let ln_rev_total = log_add_exp(0.0, st.ln_rdual());
        let law_zn = LinearFractional::from_log_params(st.log_pi(), st.ln_r())
            .expect("quenched laws satisfy a + b >= 1");
        let reversed_law_zn =
            LinearFractional::from_log_params(st.log_pi(), st.log_pi() + st.ln_rdual())
                .expect("quenched laws satisfy a + b >= 1");
        Self {
            n: st.n(),
            law_zn,
            q_n: one_minus_exp(-ln_total),
            survival: (-ln_total).exp(),
            cond_survival: geom_from_ln(st.log_pi() - ln_total),
            reversed_law_zn,
            reversed_q_n: one_minus_exp(-(st.log_pi() + ln_rev_total).max(0.0)),
            reversed_cond_survival: geom_from_ln(-ln_rev_total),
            m_n: st.m(),
            log_pi: st.log_pi(),
            r: st.r(),
            rdual: st.rdual(),
        }
    }
}

pub fn snapshot(path: &EnvPath, n: usize) -> Result<QuenchedSnapshot> {
    Ok(QuenchedSnapshot::from_state(path.state(n)?))
}

/// Parameters of the law of `Z_n` given `Z_n > 0, Z_{n+l} = 0`, which is
/// `Geom+(param)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EveOfExtinction {
    pub n: usize,
    pub l: usize,
    /// Along `e_1, ..., e_{n+l}`.
    pub param_fw: f64,
    /// Along `e_{n+l}, ..., e_1`.
    pub param_rev: f64,
    /// Almost sure limit of `param_rev` as `n -> inf` for fixed `l`.
    pub limit_param: Option<f64>,
}

/// `1 - q (1 - c)` where `q` is the extinction probability within the next
/// `l` generations and `c` the survival-conditioned geometric parameter.
fn eve_param(ln_one_minus_q: f64, ln_c: f64) -> f64 {
    let q = one_minus_exp(ln_one_minus_q);
    1.0 - q * one_minus_exp(ln_c)
}

pub fn eve_of_extinction(path: &EnvPath, n: usize, l: usize) -> Result<EveOfExtinction> {
    path.check(n + l)?;
    let head = path.state(n)?;
    let tail = path.segment_state(n, n + l)?;
    let param_fw = eve_param(
        -tail.ln_pi_plus_r().max(0.0),
        head.log_pi() - head.ln_pi_plus_r().max(0.0),
    );

    let first = path.state(l)?;
    let rest = path.segment_state(l, n + l)?;
    let param_rev = reversed_eve_param(first, rest.ln_rdual());
    Ok(EveOfExtinction {
        n,
        l,
        param_fw,
        param_rev,
        limit_param: None,
    })
}

/// `1/(Pi_l(1 + R_l^(-1))) + (1 - that) / (1 + tail)` with `tail` the dual
/// sum over the steps after `l`.
fn reversed_eve_param(first: &PathState, ln_tail: f64) -> f64 {
    let ln_one_minus_q = -(first.log_pi() + log_add_exp(0.0, first.ln_rdual())).max(0.0);
    eve_param(ln_one_minus_q, -log_add_exp(0.0, ln_tail))
}

/// [`eve_of_extinction`] together with the limit `n -> inf`, obtained by
/// extending the dual sum after step `l` with pairs drawn from `env` until
/// its mean remainder falls below `eps`.
pub fn eve_of_extinction_with_limit<R: Rng + ?Sized>(
    path: &EnvPath,
    n: usize,
    l: usize,
    env: &EnvSpec,
    eps: f64,
    n_max: usize,
    rng: &mut R,
) -> Result<EveOfExtinction> {
    let mut eve = eve_of_extinction(path, n, l)?;
    let rest = path.segment_state(l, path.len())?;
    let tail = dual_perpetuity_tail(&rest, env, eps, n_max, rng)
        .map_err(|e| Error::TailUnavailable(e.to_string()))?;
    eve.limit_param = Some(reversed_eve_param(path.state(l)?, tail.value.ln()));
    Ok(eve)
}

fn check_mn(m: usize, n: usize) -> Result<()> {
    if m > n {
        Err(Error::IndexOutOfRange { index: m, limit: n })
    } else {
        Ok(())
    }
}

/// Law of `Z_{m,n}`, the number of generation-`m` individuals with
/// descendants at `n`, given `Z_n > 0`: `Geom+(1 - R_m/(Pi_n + R_n))`.
pub fn reduced_law(path: &EnvPath, m: usize, n: usize) -> Result<GeomPlus> {
    check_mn(m, n)?;
    let st_n = path.state(n)?;
    let st_m = path.state(m)?;
    Ok(reduced_param(st_m.ln_r(), st_n.ln_pi_plus_r()))
}

fn reduced_param(ln_r_m: f64, ln_total: f64) -> GeomPlus {
    GeomPlus::new(one_minus_exp(ln_r_m - ln_total).clamp(f64::MIN_POSITIVE, 1.0))
        .expect("clamped parameter")
}

/// [`reduced_law`] for the reversed path `e_n, ..., e_1`:
/// `Geom+((1 + R_{n-m}^(-1)) / (1 + R_n^(-1)))`.
pub fn reduced_law_reversed(path: &EnvPath, m: usize, n: usize) -> Result<GeomPlus> {
    check_mn(m, n)?;
    let st_n = path.state(n)?;
    let st_k = path.state(n - m)?;
    Ok(geom_from_ln(
        log_add_exp(0.0, st_k.ln_rdual()) - log_add_exp(0.0, st_n.ln_rdual()),
    ))
}

/// Law of the number of generation-`m` descendants with offspring at `n` of
/// one generation-`l` individual that has offspring at `n`:
/// `Geom+(1 - (R_m - R_l)/(Pi_n + R_n - R_l))`, evaluated on the segment
/// after `l` to avoid the cancellation.
pub fn reduced_offspring_law(path: &EnvPath, l: usize, m: usize, n: usize) -> Result<GeomPlus> {
    if l >= m {
        return Err(Error::IndexOutOfRange { index: l, limit: m });
    }
    check_mn(m, n)?;
    let to_m = path.segment_state(l, m)?;
    let to_n = path.segment_state(l, n)?;
    Ok(reduced_param(to_m.ln_r(), to_n.ln_pi_plus_r()))
}

/// Extinction probability `q(e) = 1 - 1/R_inf` of a supercritical path and
/// the second-order constant `1/R_inf^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtinctionLimit {
    pub q_e: f64,
    pub second_order: f64,
    pub r_inf: PerpetuityEstimate,
}

/// Continues `path` with pairs from `env` until `R_n` has converged to `eps`.
pub fn extinction_limit<R: Rng + ?Sized>(
    path: &EnvPath,
    env: &EnvSpec,
    eps: f64,
    n_max: usize,
    rng: &mut R,
) -> Result<ExtinctionLimit> {
    let r_inf = perpetuity_tail(path.last_state(), env, eps, n_max, rng)?;
    let r = r_inf.value.max(1.0);
    Ok(ExtinctionLimit {
        q_e: 1.0 - 1.0 / r,
        second_order: 1.0 / (r * r),
        r_inf,
    })
}

/// Law of the limit of `Pi_n Z_n`: `w0 delta_0 + (1 - w0) Exp(exp_rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleLimit {
    pub w0: f64,
    /// `1 - w0`, kept separately so that the mean is exactly one.
    pub positive_mass: f64,
    pub exp_rate: f64,
}

impl MartingaleLimit {
    pub fn mean(&self) -> f64 {
        self.positive_mass / self.exp_rate
    }

    pub fn cdf(&self, w: f64) -> f64 {
        if w < 0.0 {
            0.0
        } else {
            self.w0 + self.positive_mass * (-(-self.exp_rate * w).exp_m1())
        }
    }

    /// Distribution function of the positive part, `Exp(exp_rate)`.
    pub fn positive_cdf(&self, w: f64) -> f64 {
        if w <= 0.0 {
            0.0
        } else {
            -(-self.exp_rate * w).exp_m1()
        }
    }
}

pub fn martingale_limit_law(r_inf: f64) -> Result<MartingaleLimit> {
    if !(r_inf >= 1.0 - Tolerances::DEFAULT.unit_mass_slack && r_inf.is_finite()) {
        return Err(Error::Domain {
            name: "R_inf",
            value: r_inf,
            domain: "[1, inf)",
        });
    }
    let r = r_inf.max(1.0);
    Ok(MartingaleLimit {
        w0: 1.0 - 1.0 / r,
        positive_mass: 1.0 / r,
        exp_rate: 1.0 / r,
    })
}

/// Offspring laws at generation `n` of the finite-line and infinite-line
/// parts of a supercritical process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    pub n: usize,
    /// Offspring law of an individual without infinite line of descent.
    pub finite_line: LfMixture,
    /// Law of the number of children with infinite line of descent of an
    /// individual that has one.
    pub infinite_line: GeomPlus,
    /// `1/(1 - q(e_{>=n}))`, the perpetuity started at step `n`.
    pub r_n_inf: f64,
    /// Same, started at step `n + 1`.
    pub r_next_inf: f64,
}

/// `r_inf` is the perpetuity of the whole path (from [`extinction_limit`]
/// or known in closed form). Needs `1 <= n <= path.len()`.
pub fn decomposition_laws(path: &EnvPath, n: usize, r_inf: f64) -> Result<Decomposition> {
    if n == 0 {
        return Err(Error::IndexOutOfRange { index: 0, limit: path.len() });
    }
    let pair = path.pair(n)?;
    let tol = Tolerances::DEFAULT.line_fit;
    let q = if r_inf.is_finite() { 1.0 - 1.0 / r_inf } else { 1.0 };
    if !(q > tol && q < 1.0 - tol) {
        return Err(Error::DegenerateDecomposition { q: q.clamp(0.0, 1.0) });
    }
    let tail_from = |k: usize| -> Result<f64> {
        let st = path.state(k)?;
        Ok((r_inf - st.r()) / st.pi())
    };
    let r_n = tail_from(n - 1)?;
    let r_next = tail_from(n)?;
    if !(r_n > 1.0 + tol && r_next > 1.0 + tol) {
        return Err(Error::DegenerateDecomposition {
            q: 1.0 - 1.0 / r_n.min(r_next),
        });
    }
    let c = pair.c();
    let w0 = (c - 1.0) * r_n / (c * (r_n - 1.0));
    let p_fin = (r_n / (c * r_next)).min(1.0);
    let finite_line = LfMixture::new(w0.clamp(0.0, 1.0 - f64::EPSILON), GeomPlus::new(p_fin)?)?;
    let infinite_line = GeomPlus::new((1.0 - pair.b() / r_n).clamp(f64::MIN_POSITIVE, 1.0))?;
    Ok(Decomposition {
        n,
        finite_line,
        infinite_line,
        r_n_inf: r_n,
        r_next_inf: r_next,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalRecord {
    pub n: usize,
    pub m_n: f64,
    /// `R_n P(Z_n > 0 | e) = (1 + 1/M_n)^{-1}`.
    pub r_times_survival: f64,
    /// `1/(1 + M_n)`.
    pub cond_param: f64,
}

pub fn critical_diagnostics(path: &EnvPath, n_grid: &[usize]) -> Result<Vec<CriticalRecord>> {
    n_grid
        .iter()
        .map(|&n| {
            let st = path.state(n)?;
            let ln_total = st.ln_pi_plus_r();
            Ok(CriticalRecord {
                n,
                m_n: st.m(),
                r_times_survival: (st.ln_r() - ln_total).exp(),
                cond_param: (st.log_pi() - ln_total).exp(),
            })
        })
        .collect()
}

impl Default for EnvPath {
    fn default() -> Self {
        EnvPath::new(Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn pair(a: f64, b: f64) -> EnvPair {
        EnvPair::new(a, b).unwrap()
    }

    fn close(x: f64, y: f64, tol: f64) -> bool {
        (x - y).abs() <= tol * (1.0 + y.abs())
    }

    #[test]
    fn snapshot_of_three_doublings() {
        let path = EnvPath::constant(pair(2.0, 1.0), 3);
        let s = snapshot(&path, 3).unwrap();
        assert!(close(s.law_zn.a(), 8.0, 1e-14) && close(s.law_zn.b(), 7.0, 1e-14));
        assert!(close(s.q_n, 14.0 / 15.0, 1e-15));
        assert!(close(s.cond_survival.p(), 8.0 / 15.0, 1e-15));
        assert!(close(s.m_n, 7.0 / 8.0, 1e-15));
        assert!(close(s.q_n, s.law_zn.gf(0.0).unwrap(), 1e-15));
        assert!(close(s.reversed_cond_survival.p(), 1.0 / (1.0 + 7.0 / 8.0), 1e-15));
    }

    #[test]
    fn snapshot_of_critical_geometric() {
        let path = EnvPath::constant(pair(1.0, 1.0), 40);
        for n in [1, 5, 40] {
            let s = snapshot(&path, n).unwrap();
            assert!(close(s.q_n, n as f64 / (n as f64 + 1.0), 1e-14));
        }
    }

    #[test]
    fn snapshot_at_zero_is_one_ancestor() {
        let path = EnvPath::constant(pair(2.0, 1.0), 2);
        let s = snapshot(&path, 0).unwrap();
        assert_eq!(s.q_n, 0.0);
        assert_eq!(s.law_zn.pmf(1), 1.0);
        assert!(snapshot(&path, 3).is_err());
    }

    #[test]
    fn reversal_swaps_dual_and_forward() {
        let path = EnvPath::new(vec![pair(2.0, 1.0), pair(0.5, 3.0), pair(1.5, 0.25)]);
        let s = snapshot(&path, 3).unwrap();
        let r = snapshot(&path.reversed(), 3).unwrap();
        assert!(close(s.reversed_law_zn.b(), r.law_zn.b(), 1e-14));
        assert!(close(s.reversed_q_n, r.q_n, 1e-14));
        assert!(close(s.reversed_cond_survival.p(), r.cond_survival.p(), 1e-14));
    }

    #[test]
    fn eve_of_extinction_constant_doubling() {
        let path = EnvPath::constant(pair(2.0, 1.0), 60);
        // the dual tail grows with n, so the parameter decreases to its limit
        let mut prev = 1.0;
        for n in 1..50 {
            let eve = eve_of_extinction(&path, n, 1).unwrap();
            assert!(eve.param_rev <= prev + 1e-15);
            prev = eve.param_rev;
        }
        assert!(close(prev, 2.0 / 3.0, 1e-12));
        let env = EnvSpec::constant(2.0, 1.0).unwrap();
        let mut r = rng::stream(0, "test", 0);
        let eve = eve_of_extinction_with_limit(&path, 3, 1, &env, 1e-14, 200, &mut r).unwrap();
        assert!(close(eve.limit_param.unwrap(), 2.0 / 3.0, 1e-12));
        assert!(eve_of_extinction(&path, 60, 1).is_err());
    }

    #[test]
    fn reversed_eve_matches_forward_formula_on_reversed_path() {
        let path = EnvPath::new(vec![
            pair(2.0, 1.0),
            pair(0.5, 3.0),
            pair(1.5, 0.25),
            pair(3.0, 2.0),
            pair(0.8, 0.5),
        ]);
        for (n, l) in [(1, 1), (2, 3), (3, 2), (4, 1), (0, 2)] {
            let eve = eve_of_extinction(&path, n, l).unwrap();
            let rev = path.reversed_prefix(n + l).unwrap();
            let fw = eve_of_extinction(&rev, n, l).unwrap();
            assert!(close(eve.param_rev, fw.param_fw, 1e-13), "n={n} l={l}");
        }
    }

    #[test]
    fn eve_limit_needs_subcritical_env() {
        let path = EnvPath::constant(pair(0.5, 1.0), 5);
        let env = EnvSpec::constant(0.5, 1.0).unwrap();
        let mut r = rng::stream(0, "test", 0);
        let err = eve_of_extinction_with_limit(&path, 2, 1, &env, 1e-9, 100, &mut r).unwrap_err();
        assert!(matches!(err, Error::TailUnavailable(_)));
    }

    #[test]
    fn reduced_laws() {
        let path = EnvPath::constant(pair(2.0, 1.0), 4);
        assert!(close(reduced_law(&path, 1, 2).unwrap().p(), 6.0 / 7.0, 1e-15));
        assert_eq!(reduced_law(&path, 0, 3).unwrap().p(), 1.0);
        let s = snapshot(&path, 3).unwrap();
        assert!(close(reduced_law(&path, 3, 3).unwrap().p(), s.cond_survival.p(), 1e-15));
        assert!(close(reduced_offspring_law(&path, 0, 1, 2).unwrap().p(), 6.0 / 7.0, 1e-15));
        assert!(reduced_offspring_law(&path, 2, 2, 3).is_err());
        assert!(reduced_law(&path, 3, 2).is_err());
        let last = reduced_offspring_law(&path, 2, 3, 3).unwrap().p();
        let (r2, r3, t3) = (3.0, 7.0, 15.0);
        assert!(close(last, 1.0 - (r3 - r2) / (t3 - r2), 1e-15));
    }

    #[test]
    fn reduced_composition_identity() {
        let path = EnvPath::new(vec![pair(2.0, 1.0), pair(0.5, 3.0), pair(1.5, 0.25), pair(0.7, 2.0)]);
        for n in 1..=4 {
            for m in 1..=n {
                for l in 0..m {
                    let lhs = reduced_law(&path, m, n).unwrap().p();
                    let rhs = reduced_law(&path, l, n).unwrap().p()
                        * reduced_offspring_law(&path, l, m, n).unwrap().p();
                    assert!(close(lhs, rhs, 1e-13));
                }
            }
        }
    }

    #[test]
    fn reversed_reduced_law_matches_reversed_path() {
        let path = EnvPath::new(vec![pair(2.0, 1.0), pair(0.5, 3.0), pair(1.5, 0.25)]);
        for m in 0..=3 {
            let a = reduced_law_reversed(&path, m, 3).unwrap().p();
            let b = reduced_law(&path.reversed(), m, 3).unwrap().p();
            assert!(close(a, b, 1e-14));
        }
    }

    #[test]
    fn extinction_limits() {
        let mut r = rng::stream(0, "test", 0);
        let env = EnvSpec::constant(0.5, 1.0).unwrap();
        let lim = extinction_limit(&EnvPath::default(), &env, 1e-14, 200, &mut r).unwrap();
        assert!(close(lim.q_e, 0.5, 1e-12));
        assert!(close(lim.second_order, 0.25, 1e-12));
        let geo = EnvSpec::constant(0.5, 0.5).unwrap();
        let lim = extinction_limit(&EnvPath::default(), &geo, 1e-14, 200, &mut r).unwrap();
        assert!(lim.q_e.abs() < 1e-12);
        let sub = EnvSpec::constant(2.0, 1.0).unwrap();
        assert!(extinction_limit(&EnvPath::default(), &sub, 1e-9, 200, &mut r).is_err());
    }

    #[test]
    fn martingale_limit() {
        let m = martingale_limit_law(1.0).unwrap();
        assert_eq!((m.w0, m.exp_rate), (0.0, 1.0));
        let m = martingale_limit_law(2.0).unwrap();
        assert_eq!((m.w0, m.exp_rate), (0.5, 0.5));
        for r in [1.0, 1.5, 3.0, 1e6] {
            assert!(close(martingale_limit_law(r).unwrap().mean(), 1.0, 1e-15));
        }
        assert!(martingale_limit_law(0.5).is_err());
    }

    #[test]
    fn decomposition_constant() {
        let path = EnvPath::constant(pair(0.5, 1.0), 3);
        let d = decomposition_laws(&path, 1, 2.0).unwrap();
        let lf = d.finite_line.to_lf().unwrap();
        assert!(close(lf.a(), 2.0, 1e-12) && close(lf.b(), 1.0, 1e-12));
        assert!(close(d.infinite_line.p(), 0.5, 1e-12));
        assert!(close(d.r_n_inf, 2.0, 1e-12));
        let d3 = decomposition_laws(&path, 3, 2.0).unwrap();
        assert!(close(d3.infinite_line.p(), 0.5, 1e-12));
        let geo = EnvPath::constant(pair(0.5, 0.5), 3);
        assert!(matches!(
            decomposition_laws(&geo, 1, 1.0),
            Err(Error::DegenerateDecomposition { .. })
        ));
    }

    #[test]
    fn decomposition_constant_extinction_probability() {
        // A = 1 - B(1 - q) keeps q(e_{>=n}) = q on every path
        let q = 0.4;
        let bs = [0.5, 1.5, 1.25, 0.8];
        let pairs: Vec<EnvPair> = bs.iter().map(|&b| pair(1.0 - b * (1.0 - q), b)).collect();
        let path = EnvPath::new(pairs);
        let r_inf = 1.0 / (1.0 - q);
        for n in 1..=bs.len() - 1 {
            let d = decomposition_laws(&path, n, r_inf).unwrap();
            assert!(close(d.r_n_inf, r_inf, 1e-12));
            assert!(close(d.infinite_line.p(), 1.0 - bs[n - 1] * (1.0 - q), 1e-12));
        }
    }

    #[test]
    fn critical_diagnostics_records() {
        let path = EnvPath::constant(pair(1.0, 1.0), 64);
        let recs = critical_diagnostics(&path, &[1, 8, 64]).unwrap();
        for rec in &recs {
            let n = rec.n as f64;
            assert!(close(rec.m_n, n, 1e-13));
            assert!(close(rec.r_times_survival, n / (n + 1.0), 1e-13));
        }
        let sub = EnvPath::constant(pair(2.0, 1.0), 10);
        let rec = critical_diagnostics(&sub, &[10]).unwrap()[0];
        assert!(close(rec.m_n, 1.0 - 2f64.powi(-10), 1e-13));
        assert!(critical_diagnostics(&path, &[]).unwrap().is_empty());
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let path = EnvPath::new(vec![pair(0.1 + 0.2, 1.0 / 3.0 + 1.0), pair(2.0, 1e-300 + 1.0)]);
        let mut buf = Vec::new();
        path.write_jsonl(&mut buf).unwrap();
        let back = EnvPath::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, path);
        assert!(EnvPath::read_jsonl(&b"{\"a\":0.1,\"b\":0.1}\n"[..]).is_err());
    }
}
