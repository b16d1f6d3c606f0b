//! Distributions of the environment pair `(A, B)`.
//!
//! Discrete specifications (tables, constants, degenerate lines over a table
//! of `A` values) have exact moments. The log-normal family has closed forms
//! for every moment used here, including the truncated version that keeps
//! `B = x(1 - A)` positive.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::affine::EnvPair;
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, log_add_exp};
use crate::tolerance::Tolerances;

/// One atom `(A, B)` of a discrete table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub a: f64,
    pub b: f64,
    pub weight: f64,
}

/// One atom of the law of `A` on a degenerate line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AAtom {
    pub a: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSign {
    /// `B = x(1 - A)`, forces `A < 1`.
    Plus,
    /// `B = x(A - 1)`, forces `A > 1`.
    Minus,
}

/// How `B` is tied to a log-normal `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BRule {
    /// `B = b` for a constant `b >= 1`.
    Constant { b: f64 },
    /// `B = x(1 - A)` with `A` conditioned on `A < 1`; requires `x >= 1`.
    Line { x: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum EnvVariant {
    DiscreteTable { atoms: Vec<Atom> },
    ConstantPair { a: f64, b: f64 },
    /// `log A ~ N(mu, sigma^2)`.
    LogNormalA { mu: f64, sigma: f64, b_rule: BRule },
    DegenerateLine {
        x: f64,
        sign: LineSign,
        law_of_a: Vec<AAtom>,
    },
}

/// The law of the environment pair `(A, B)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnvSpec", into = "RawEnvSpec")]
pub struct EnvSpec {
    pub variant: EnvVariant,
    /// Free-form label recorded with outputs.
    pub seed_domain: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawEnvSpec {
    #[serde(flatten)]
    variant: EnvVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed_domain: Option<String>,
}

impl TryFrom<RawEnvSpec> for EnvSpec {
    type Error = Error;
    fn try_from(raw: RawEnvSpec) -> Result<Self> {
        let spec = EnvSpec {
            variant: raw.variant,
            seed_domain: raw.seed_domain,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<EnvSpec> for RawEnvSpec {
    fn from(spec: EnvSpec) -> Self {
        RawEnvSpec {
            variant: spec.variant,
            seed_domain: spec.seed_domain,
        }
    }
}

/// Subcritical subregime read off the cumulant generating function
/// `psi(theta) = log E (1/A)^theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubregimeLabel {
    Strongly,
    Intermediately,
    Weakly,
    NotSubcritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubcriticalRegime {
    pub label: SubregimeLabel,
    pub psi0_prime: f64,
    pub psi1_prime: f64,
    pub kappa: Option<f64>,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `phi(z) / Phi(z)`, stable in the left tail.
fn inverse_mills(z: f64) -> f64 {
    let cdf = std_normal_cdf(z);
    if cdf > 1e-300 {
        std_normal_pdf(z) / cdf
    } else {
        // asymptotic expansion for z -> -inf
        -z / (1.0 - 1.0 / (z * z))
    }
}

/// Antiderivative of `Phi`: `G(t) = t Phi(t) + phi(t)`.
fn phi_integral(t: f64) -> f64 {
    t * std_normal_cdf(t) + std_normal_pdf(t)
}

/// Log-normal helper: `log A = Y ~ N(mu, sigma^2)`, optionally conditioned on `Y < 0`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogNormalLaw {
    pub mu: f64,
    pub sigma: f64,
    pub truncated: bool,
}

impl LogNormalLaw {
    fn alpha(&self) -> f64 {
        -self.mu / self.sigma
    }

    /// `ln E e^{t Y}`.
    pub fn ln_mgf(&self, t: f64) -> f64 {
        let base = t * self.mu + 0.5 * t * t * self.sigma * self.sigma;
        if self.truncated {
            let a = self.alpha();
            base + std_normal_cdf(a - t * self.sigma).ln() - std_normal_cdf(a).ln()
        } else {
            base
        }
    }

    /// `d/dt ln E e^{t Y}`.
    pub fn ln_mgf_prime(&self, t: f64) -> f64 {
        let base = self.mu + t * self.sigma * self.sigma;
        if self.truncated {
            base - self.sigma * inverse_mills(self.alpha() - t * self.sigma)
        } else {
            base
        }
    }

    pub fn mean(&self) -> f64 {
        self.ln_mgf_prime(0.0)
    }

    pub fn second_moment(&self) -> f64 {
        if self.truncated {
            let b = self.alpha();
            let l = inverse_mills(b);
            let var = self.sigma * self.sigma * (1.0 - b * l - l * l);
            let m = self.mean();
            var + m * m
        } else {
            self.mu * self.mu + self.sigma * self.sigma
        }
    }

    pub fn mean_abs(&self) -> f64 {
        if self.truncated {
            -self.mean()
        } else {
            let (m, s) = (self.mu, self.sigma);
            s * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * m * m / (s * s)).exp()
                + m * (1.0 - 2.0 * std_normal_cdf(-m / s))
        }
    }

    /// `P(Y > y)`.
    fn survival(&self, y: f64) -> f64 {
        let z = (y - self.mu) / self.sigma;
        if self.truncated {
            if y >= 0.0 {
                return 0.0;
            }
            let top = std_normal_cdf(self.alpha());
            (top - std_normal_cdf(z)).max(0.0) / top
        } else {
            std_normal_cdf(-z)
        }
    }

    /// `P(-Y > y)` for `y >= 0`.
    fn neg_survival(&self, y: f64) -> f64 {
        let z = (-y - self.mu) / self.sigma;
        let cdf = std_normal_cdf(z);
        if self.truncated {
            cdf / std_normal_cdf(self.alpha())
        } else {
            cdf
        }
    }

    /// `J-(x) = E min(x, (-Y)^+) = int_0^x P(-Y > y) dy`.
    pub fn j_minus(&self, x: f64) -> f64 {
        let s = self.sigma;
        let raw = s * (phi_integral(-self.mu / s) - phi_integral((-x - self.mu) / s));
        if self.truncated {
            raw / std_normal_cdf(self.alpha())
        } else {
            raw
        }
    }

    /// `J+(x) = E min(x, Y^+)`.
    pub fn j_plus(&self, x: f64) -> f64 {
        if self.truncated {
            return 0.0;
        }
        let s = self.sigma;
        x - s * (phi_integral((x - self.mu) / s) - phi_integral(-self.mu / s))
    }

    /// Quantile transform of a uniform.
    pub fn quantile(&self, u: f64) -> f64 {
        let std = Normal::standard();
        let p = if self.truncated {
            u * std_normal_cdf(self.alpha())
        } else {
            u
        };
        let p = p.clamp(1e-300, 1.0 - 1e-16);
        self.mu + self.sigma * std.inverse_cdf(p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.truncated {
            let u: f64 = rng.random();
            self.quantile(u)
        } else {
            let z: f64 = rng.sample(StandardNormal);
            self.mu + self.sigma * z
        }
    }

    #[allow(dead_code)]
    fn check_survival(&self) -> (f64, f64) {
        (self.survival(0.0), self.neg_survival(0.0))
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

impl EnvSpec {
    pub fn new(variant: EnvVariant) -> Result<Self> {
        let spec = EnvSpec {
            variant,
            seed_domain: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn constant(a: f64, b: f64) -> Result<Self> {
        Self::new(EnvVariant::ConstantPair { a, b })
    }

    /// Table from `(a, b, weight)` triples.
    pub fn table(atoms: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(EnvVariant::DiscreteTable {
            atoms: atoms
                .iter()
                .map(|&(a, b, weight)| Atom { a, b, weight })
                .collect(),
        })
    }

    pub fn log_normal(mu: f64, sigma: f64, b_rule: BRule) -> Result<Self> {
        Self::new(EnvVariant::LogNormalA { mu, sigma, b_rule })
    }

    pub fn line(x: f64, sign: LineSign, law_of_a: &[(f64, f64)]) -> Result<Self> {
        Self::new(EnvVariant::DegenerateLine {
            x,
            sign,
            law_of_a: law_of_a
                .iter()
                .map(|&(a, weight)| AAtom { a, weight })
                .collect(),
        })
    }

    pub fn with_seed_domain(mut self, domain: impl Into<String>) -> Self {
        self.seed_domain = Some(domain.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let tol = Tolerances::DEFAULT;
        match &self.variant {
            EnvVariant::DiscreteTable { atoms } => {
                if atoms.is_empty() {
                    return Err(invalid("discrete table has no atoms"));
                }
                for atom in atoms {
                    if !(atom.weight > 0.0 && atom.weight.is_finite()) {
                        return Err(invalid(format!("atom weight {} must be positive", atom.weight)));
                    }
                    EnvPair::new(atom.a, atom.b)?;
                }
                let total = compensated_sum(atoms.iter().map(|a| a.weight));
                if (total - 1.0).abs() > tol.weight_sum {
                    return Err(invalid(format!("weights sum to {total}, not 1")));
                }
            }
            EnvVariant::ConstantPair { a, b } => {
                EnvPair::new(*a, *b)?;
            }
            EnvVariant::LogNormalA { mu, sigma, b_rule } => {
                if !mu.is_finite() {
                    return Err(invalid("mu must be finite"));
                }
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(invalid("sigma must be positive (use ConstantPair for sigma = 0)"));
                }
                match *b_rule {
                    BRule::Constant { b } => {
                        if !(b >= 1.0 && b.is_finite()) {
                            return Err(invalid("constant B must be at least 1 when A is log-normal"));
                        }
                    }
                    BRule::Line { x } => {
                        if !(x >= 1.0 && x.is_finite()) {
                            return Err(invalid("line B = x(1-A) needs x >= 1"));
                        }
                    }
                }
            }
            EnvVariant::DegenerateLine { x, sign, law_of_a } => {
                if !(*x > 0.0 && x.is_finite()) {
                    return Err(invalid("line coefficient x must be positive"));
                }
                if *sign == LineSign::Plus && *x < 1.0 {
                    return Err(invalid("B = x(1-A) with A + B >= 1 can only occur for x >= 1"));
                }
                if law_of_a.is_empty() {
                    return Err(invalid("law of A has no atoms"));
                }
                for atom in law_of_a {
                    if !(atom.weight > 0.0 && atom.weight.is_finite()) {
                        return Err(invalid(format!("atom weight {} must be positive", atom.weight)));
                    }
                    let ok = match sign {
                        LineSign::Plus => atom.a > 0.0 && atom.a < 1.0,
                        LineSign::Minus => atom.a > 1.0 && atom.a.is_finite(),
                    };
                    if !ok {
                        return Err(invalid(format!(
                            "A = {} does not give a positive B on this line",
                            atom.a
                        )));
                    }
                }
                let total = compensated_sum(law_of_a.iter().map(|a| a.weight));
                if (total - 1.0).abs() > tol.weight_sum {
                    return Err(invalid(format!("weights sum to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Canonical atom list (sorted by `(A, B)`, duplicates merged) for the
    /// discretely supported variants; `None` for the log-normal family.
    pub fn atoms(&self) -> Option<Vec<Atom>> {
        let mut atoms: Vec<Atom> = match &self.variant {
            EnvVariant::DiscreteTable { atoms } => atoms.clone(),
            EnvVariant::ConstantPair { a, b } => vec![Atom {
                a: *a,
                b: *b,
                weight: 1.0,
            }],
            EnvVariant::DegenerateLine { x, sign, law_of_a } => law_of_a
                .iter()
                .map(|aa| Atom {
                    a: aa.a,
                    b: match sign {
                        LineSign::Plus => x * (1.0 - aa.a),
                        LineSign::Minus => x * (aa.a - 1.0),
                    },
                    weight: aa.weight,
                })
                .collect(),
            EnvVariant::LogNormalA { .. } => return None,
        };
        atoms.sort_by(|p, q| p.a.total_cmp(&q.a).then(p.b.total_cmp(&q.b)));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match merged.last_mut() {
                Some(last) if last.a == atom.a && last.b == atom.b => last.weight += atom.weight,
                _ => merged.push(atom),
            }
        }
        Some(merged)
    }

    pub(crate) fn log_normal_law(&self) -> Option<LogNormalLaw> {
        match &self.variant {
            EnvVariant::LogNormalA { mu, sigma, b_rule } => Some(LogNormalLaw {
                mu: *mu,
                sigma: *sigma,
                truncated: matches!(b_rule, BRule::Line { .. }),
            }),
            _ => None,
        }
    }

    /// Whether every moment is computed exactly (no Monte Carlo anywhere).
    pub fn is_discrete(&self) -> bool {
        !matches!(self.variant, EnvVariant::LogNormalA { .. })
    }

    /// Draws one environment pair. Tables consume one uniform, constants none.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvPair {
        match &self.variant {
            EnvVariant::ConstantPair { a, b } => EnvPair::new_unchecked(*a, *b),
            EnvVariant::DiscreteTable { atoms } => {
                let atom = pick(atoms.iter().map(|a| a.weight), rng);
                EnvPair::new_unchecked(atoms[atom].a, atoms[atom].b)
            }
            EnvVariant::DegenerateLine { x, sign, law_of_a } => {
                let a = law_of_a[pick(law_of_a.iter().map(|a| a.weight), rng)].a;
                let b = match sign {
                    LineSign::Plus => x * (1.0 - a),
                    LineSign::Minus => x * (a - 1.0),
                };
                EnvPair::new_unchecked(a, b)
            }
            EnvVariant::LogNormalA { b_rule, .. } => {
                let law = self.log_normal_law().expect("log-normal variant");
                let a = law.sample(rng).exp();
                match *b_rule {
                    BRule::Constant { b } => EnvPair::new_unchecked(a, b),
                    BRule::Line { x } => EnvPair::new_unchecked(a, x * (1.0 - a)),
                }
            }
        }
    }

    /// Exact expectation of `g(A, B)` over the atoms.
    fn atom_mean(&self, g: impl Fn(f64, f64) -> f64) -> Option<f64> {
        self.atoms()
            .map(|atoms| compensated_sum(atoms.iter().map(|at| at.weight * g(at.a, at.b))))
    }

    /// `E log A`, the negative drift of `S_n = -log Pi_n`.
    pub fn mean_log_a(&self) -> f64 {
        match self.log_normal_law() {
            Some(law) => law.mean(),
            None => self.atom_mean(|a, _| a.ln()).expect("discrete"),
        }
    }

    /// `E |log A|`, used as the scale for exact-zero decisions.
    pub fn mean_abs_log_a(&self) -> f64 {
        match self.log_normal_law() {
            Some(law) => law.mean_abs(),
            None => self.atom_mean(|a, _| a.ln().abs()).expect("discrete"),
        }
    }

    pub fn mean_log_sq_a(&self) -> f64 {
        match self.log_normal_law() {
            Some(law) => law.second_moment(),
            None => self.atom_mean(|a, _| a.ln() * a.ln()).expect("discrete"),
        }
    }

    pub fn mean_a(&self) -> f64 {
        match self.log_normal_law() {
            Some(law) => law.ln_mgf(1.0).exp(),
            None => self.atom_mean(|a, _| a).expect("discrete"),
        }
    }

    pub fn mean_b(&self) -> f64 {
        match &self.variant {
            EnvVariant::LogNormalA { b_rule, .. } => match *b_rule {
                BRule::Constant { b } => b,
                BRule::Line { x } => x * (1.0 - self.mean_a()),
            },
            _ => self.atom_mean(|_, b| b).expect("discrete"),
        }
    }

    /// `E [B / A]`, the mean increment of the dual perpetuity.
    pub fn mean_b_over_a(&self) -> f64 {
        match &self.variant {
            EnvVariant::LogNormalA { b_rule, .. } => {
                let inv = self.log_normal_law().unwrap().ln_mgf(-1.0).exp();
                match *b_rule {
                    BRule::Constant { b } => b * inv,
                    BRule::Line { x } => x * (inv - 1.0),
                }
            }
            _ => self.atom_mean(|a, b| b / a).expect("discrete"),
        }
    }

    /// `E [B |log A|]`.
    pub fn mean_b_abs_log_a(&self) -> f64 {
        match &self.variant {
            EnvVariant::LogNormalA { b_rule, .. } => match *b_rule {
                BRule::Constant { b } => b * self.mean_abs_log_a(),
                // B = x(1 - A) <= x, a crude but finite bound is enough for
                // gating moment conditions
                BRule::Line { x } => x * self.mean_abs_log_a(),
            },
            _ => self.atom_mean(|a, b| b * a.ln().abs()).expect("discrete"),
        }
    }

    /// `psi(theta) = log E (1/A)^theta`.
    pub fn psi(&self, theta: f64) -> Result<f64> {
        let v = match self.log_normal_law() {
            Some(law) => law.ln_mgf(-theta),
            None => {
                let atoms = self.atoms().expect("discrete");
                atoms
                    .iter()
                    .map(|at| at.weight.ln() - theta * at.a.ln())
                    .fold(f64::NEG_INFINITY, log_add_exp)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::MomentDiverged(format!("E (1/A)^{theta} is not finite")))
        }
    }

    /// `psi'(theta) = e^{-psi(theta)} E[log(1/A) (1/A)^theta]`.
    pub fn psi_prime(&self, theta: f64) -> Result<f64> {
        match self.log_normal_law() {
            Some(law) => {
                let v = -law.ln_mgf_prime(-theta);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::MomentDiverged(format!("psi'({theta}) is not finite")))
                }
            }
            None => {
                let psi = self.psi(theta)?;
                let atoms = self.atoms().expect("discrete");
                Ok(compensated_sum(atoms.iter().map(|at| {
                    let l = -at.a.ln();
                    at.weight * l * (theta * l - psi).exp()
                })))
            }
        }
    }

    /// `kappa = psi(1) = log E (1/A)`.
    pub fn kappa(&self) -> Result<f64> {
        self.psi(1.0)
    }

    /// Scale for deciding `psi'(theta) == 0`.
    fn psi_prime_scale(&self, theta: f64) -> Result<f64> {
        match self.log_normal_law() {
            Some(law) => Ok(law.sigma * (1.0 + theta * law.sigma) + law.mu.abs()),
            None => {
                let psi = self.psi(theta)?;
                let atoms = self.atoms().expect("discrete");
                Ok(compensated_sum(atoms.iter().map(|at| {
                    let l = -at.a.ln();
                    at.weight * l.abs() * (theta * l - psi).exp()
                })))
            }
        }
    }

    pub fn subregime(&self) -> Result<SubcriticalRegime> {
        self.subregime_with(&Tolerances::DEFAULT)
    }

    /// Sign pattern of `(psi'(0), psi'(1))`. The intermediate case
    /// `psi'(1) = 0` is only ever reported from closed-form arithmetic.
    pub fn subregime_with(&self, tol: &Tolerances) -> Result<SubcriticalRegime> {
        let psi0_prime = self.psi_prime(0.0)?;
        let zero0 = tol.exact_zero * self.psi_prime_scale(0.0)?.max(f64::MIN_POSITIVE);
        let kappa = self.kappa().ok();
        if psi0_prime >= -zero0 {
            let psi1_prime = self.psi_prime(1.0).unwrap_or(f64::NAN);
            return Ok(SubcriticalRegime {
                label: SubregimeLabel::NotSubcritical,
                psi0_prime,
                psi1_prime,
                kappa,
            });
        }
        let psi1_prime = self.psi_prime(1.0)?;
        let zero1 = tol.exact_zero * self.psi_prime_scale(1.0)?.max(f64::MIN_POSITIVE);
        let label = if psi1_prime.abs() <= zero1 {
            SubregimeLabel::Intermediately
        } else if psi1_prime < 0.0 {
            SubregimeLabel::Strongly
        } else {
            SubregimeLabel::Weakly
        };
        Ok(SubcriticalRegime {
            label,
            psi0_prime,
            psi1_prime,
            kappa,
        })
    }

    /// Environment under the tilted measure with single-step density
    /// `(1/A) e^{-kappa}`.
    pub fn tilt(&self) -> Result<EnvSpec> {
        self.tilt_by(1.0)
    }

    /// Exponential tilt with single-step density `(1/A)^theta e^{-psi(theta)}`.
    /// `tilt_by(-theta)` undoes `tilt_by(theta)`.
    pub fn tilt_by(&self, theta: f64) -> Result<EnvSpec> {
        let psi = self.psi(theta)?;
        let reweight = |a: f64, w: f64| w * (-theta * a.ln() - psi).exp();
        let variant = match &self.variant {
            EnvVariant::ConstantPair { .. } => self.variant.clone(),
            EnvVariant::DiscreteTable { atoms } => {
                let mut atoms: Vec<Atom> = atoms
                    .iter()
                    .map(|at| Atom {
                        weight: reweight(at.a, at.weight),
                        ..*at
                    })
                    .collect();
                normalize(atoms.iter_mut().map(|a| &mut a.weight));
                EnvVariant::DiscreteTable { atoms }
            }
            EnvVariant::DegenerateLine { x, sign, law_of_a } => {
                let mut law_of_a: Vec<AAtom> = law_of_a
                    .iter()
                    .map(|at| AAtom {
                        weight: reweight(at.a, at.weight),
                        ..*at
                    })
                    .collect();
                normalize(law_of_a.iter_mut().map(|a| &mut a.weight));
                EnvVariant::DegenerateLine {
                    x: *x,
                    sign: *sign,
                    law_of_a,
                }
            }
            // density e^{-theta y} shifts the normal mean by -theta sigma^2,
            // the truncation at zero is untouched
            EnvVariant::LogNormalA { mu, sigma, b_rule } => EnvVariant::LogNormalA {
                mu: mu - theta * sigma * sigma,
                sigma: *sigma,
                b_rule: *b_rule,
            },
        };
        Ok(EnvSpec {
            variant,
            seed_domain: self.seed_domain.clone(),
        })
    }

    /// `Some(x)` when `A x + B = x` holds a.s. (a degenerate line); `x > 0`
    /// for `B = x(1 - A)`, `x < 0` for `B = |x|(A - 1)`.
    pub fn degenerate_line(&self, tol: &Tolerances) -> Option<f64> {
        match &self.variant {
            EnvVariant::DegenerateLine { x, sign, .. } => Some(match sign {
                LineSign::Plus => *x,
                LineSign::Minus => -*x,
            }),
            EnvVariant::LogNormalA { b_rule, .. } => match *b_rule {
                BRule::Line { x } => Some(x),
                BRule::Constant { .. } => None,
            },
            _ => {
                let atoms = self.atoms().expect("discrete");
                let fit = atoms.iter().find(|at| at.a != 1.0)?;
                let x = fit.b / (1.0 - fit.a);
                let on_line = atoms
                    .iter()
                    .all(|at| (at.b - x * (1.0 - at.a)).abs() <= tol.line_fit * (1.0 + x.abs()));
                (on_line && x != 0.0).then_some(x)
            }
        }
    }

    /// `A = 1` almost surely.
    pub fn a_is_one(&self) -> bool {
        match self.atoms() {
            Some(atoms) => atoms.iter().all(|at| at.a == 1.0),
            None => false,
        }
    }
}

fn normalize<'a>(weights: impl Iterator<Item = &'a mut f64>) {
    let ws: Vec<&mut f64> = weights.collect();
    let total = compensated_sum(ws.iter().map(|w| **w));
    for w in ws {
        *w /= total;
    }
}

/// Inverse-CDF choice of an index from (normalized) weights, one uniform.
fn pick<R: Rng + ?Sized>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_atoms() -> EnvSpec {
        EnvSpec::table(&[(2.0, 1.0, 0.5), (4.0, 1.0, 0.5)]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(EnvSpec::table(&[(2.0, 1.0, 0.5), (4.0, 1.0, 0.4)]).is_err());
        assert!(EnvSpec::table(&[(0.2, 0.3, 1.0)]).is_err());
        assert!(EnvSpec::table(&[]).is_err());
        assert!(EnvSpec::line(0.5, LineSign::Plus, &[(0.5, 1.0)]).is_err());
        assert!(EnvSpec::line(2.0, LineSign::Plus, &[(1.5, 1.0)]).is_err());
        assert!(EnvSpec::line(2.0, LineSign::Minus, &[(0.5, 1.0)]).is_err());
        assert!(EnvSpec::log_normal(0.0, 0.0, BRule::Constant { b: 1.0 }).is_err());
        assert!(EnvSpec::log_normal(0.0, 1.0, BRule::Constant { b: 0.5 }).is_err());
        assert!(EnvSpec::constant(2.0, 1.0).is_ok());
    }

    #[test]
    fn json_round_trip_is_bit_stable() {
        let spec = EnvSpec::table(&[(0.1, 0.9, 0.3), (2.0 / 3.0, 1.0 / 3.0 + 0.1, 0.7)])
            .unwrap()
            .with_seed_domain("demo");
        let s = serde_json::to_string(&spec).unwrap();
        let back: EnvSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
        let c: EnvSpec = serde_json::from_str(r#"{"variant":"ConstantPair","a":2,"b":1}"#).unwrap();
        assert_eq!(c, EnvSpec::constant(2.0, 1.0).unwrap());
        assert!(serde_json::from_str::<EnvSpec>(r#"{"variant":"ConstantPair","a":0.1,"b":0.1}"#).is_err());
        assert!(serde_json::from_str::<EnvSpec>(r#"{"variant":"Nope"}"#).is_err());
    }

    #[test]
    fn sample_pair_constant_and_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = EnvSpec::constant(2.0, 1.0).unwrap();
        for _ in 0..10 {
            let p = c.sample_pair(&mut rng);
            assert_eq!((p.a(), p.b()), (2.0, 1.0));
        }
        let line = EnvSpec::line(2.0, LineSign::Plus, &[(0.25, 0.5), (0.5, 0.5)]).unwrap();
        for _ in 0..100 {
            let p = line.sample_pair(&mut rng);
            let expected = if p.a() == 0.25 { 1.5 } else { 1.0 };
            assert_eq!(p.b(), expected);
        }
    }

    #[test]
    fn sample_pair_table_frequencies() {
        let env = EnvSpec::table(&[(2.0, 1.0, 0.3), (0.5, 1.0, 0.7)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| env.sample_pair(&mut rng).a() == 2.0).count() as f64;
        let sd = (n as f64 * 0.3 * 0.7).sqrt();
        assert!((hits - 0.3 * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn psi_examples() {
        let c = EnvSpec::constant(2.0, 1.0).unwrap();
        for theta in [0.0, 0.3, 1.0] {
            assert!((c.psi(theta).unwrap() + theta * 2f64.ln()).abs() < 1e-15);
        }
        assert_eq!(two_atoms().psi(0.0).unwrap(), 0.0);
        assert!((two_atoms().psi(1.0).unwrap() - 0.375f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kappa_examples() {
        assert!((EnvSpec::constant(2.0, 1.0).unwrap().kappa().unwrap() + 2f64.ln()).abs() < 1e-15);
        assert_eq!(EnvSpec::constant(1.0, 1.0).unwrap().kappa().unwrap(), 0.0);
        assert!((two_atoms().kappa().unwrap() - 0.375f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn psi_is_convex_on_grid() {
        let envs = [
            two_atoms(),
            EnvSpec::table(&[(0.5, 1.0, 0.2), (4.0, 0.5, 0.8)]).unwrap(),
            EnvSpec::log_normal(0.3, 0.8, BRule::Constant { b: 1.0 }).unwrap(),
            EnvSpec::log_normal(-0.3, 0.5, BRule::Line { x: 2.0 }).unwrap(),
        ];
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        for env in &envs {
            for w in grid.windows(3) {
                let mid = env.psi(w[1]).unwrap();
                let chord = 0.5 * (env.psi(w[0]).unwrap() + env.psi(w[2]).unwrap());
                assert!(mid <= chord + 1e-9);
            }
        }
    }

    #[test]
    fn psi_prime_matches_finite_differences() {
        let envs = [
            two_atoms(),
            EnvSpec::log_normal(0.3, 0.8, BRule::Constant { b: 1.0 }).unwrap(),
            EnvSpec::log_normal(-0.3, 0.5, BRule::Line { x: 2.0 }).unwrap(),
        ];
        let h = 1e-6;
        for env in &envs {
            for theta in [0.2, 0.5, 0.8] {
                let fd = (env.psi(theta + h).unwrap() - env.psi(theta - h).unwrap()) / (2.0 * h);
                assert!((env.psi_prime(theta).unwrap() - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn truncated_log_normal_moments_match_quadrature() {
        let law = LogNormalLaw {
            mu: -0.4,
            sigma: 0.7,
            truncated: true,
        };
        // midpoint rule over the truncated normal density on (-12, 0)
        let n = 200_000;
        let lo = -12.0;
        let h = -lo / n as f64;
        let norm = std_normal_cdf(-law.mu / law.sigma);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        let mut ea = 0.0;
        for i in 0..n {
            let y = lo + (i as f64 + 0.5) * h;
            let d = std_normal_pdf((y - law.mu) / law.sigma) / law.sigma / norm * h;
            m1 += y * d;
            m2 += y * y * d;
            ea += y.exp() * d;
        }
        assert!((law.mean() - m1).abs() < 1e-8);
        assert!((law.second_moment() - m2).abs() < 1e-8);
        assert!((law.ln_mgf(1.0).exp() - ea).abs() < 1e-8);
        let j = law.j_minus(0.8);
        let mut jq = 0.0;
        let m = 100_000;
        for i in 0..m {
            let y = (i as f64 + 0.5) * 0.8 / m as f64;
            jq += law.neg_survival(y) * 0.8 / m as f64;
        }
        assert!((j - jq).abs() < 1e-8);
        assert_eq!(law.survival(0.0), 0.0);
    }

    #[test]
    fn j_plus_matches_quadrature() {
        let law = LogNormalLaw {
            mu: 0.3,
            sigma: 1.1,
            truncated: false,
        };
        let x = 2.5;
        let m = 100_000;
        let mut jq = 0.0;
        for i in 0..m {
            let y = (i as f64 + 0.5) * x / m as f64;
            jq += law.survival(y) * x / m as f64;
        }
        assert!((law.j_plus(x) - jq).abs() < 1e-8);
    }

    #[test]
    fn subregime_examples() {
        let r = EnvSpec::constant(2.0, 1.0).unwrap().subregime().unwrap();
        assert_eq!(r.label, SubregimeLabel::Strongly);
        assert!((r.psi0_prime + 2f64.ln()).abs() < 1e-15);
        assert!((r.psi1_prime + 2f64.ln()).abs() < 1e-15);

        let r = EnvSpec::constant(0.5, 0.5).unwrap().subregime().unwrap();
        assert_eq!(r.label, SubregimeLabel::NotSubcritical);
        assert!((r.psi0_prime - 2f64.ln()).abs() < 1e-15);

        // E[(1/A) log(1/A)] = 0.2 * 2 ln 2 - 0.8 * (1/4) ln 4 = 0
        let t = EnvSpec::table(&[(0.5, 1.0, 0.2), (4.0, 1.0, 0.8)]).unwrap();
        let r = t.subregime().unwrap();
        assert_eq!(r.label, SubregimeLabel::Intermediately);

        let w = EnvSpec::table(&[(0.5, 1.0, 0.3), (4.0, 1.0, 0.7)]).unwrap();
        assert_eq!(w.subregime().unwrap().label, SubregimeLabel::Weakly);
    }

    #[test]
    fn constant_pairs_are_strongly_subcritical_iff_a_exceeds_one() {
        for &a in &[0.2, 0.5, 0.9, 1.0, 1.1, 2.0, 5.0] {
            for &b in &[1.0, 2.0, 7.0] {
                let r = EnvSpec::constant(a, b).unwrap().subregime().unwrap();
                assert_eq!(r.label == SubregimeLabel::Strongly, a > 1.0, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn tilt_examples() {
        let c = EnvSpec::constant(2.0, 1.0).unwrap();
        assert_eq!(c.tilt().unwrap(), c);

        let t = two_atoms().tilt().unwrap();
        let atoms = t.atoms().unwrap();
        assert!((atoms[0].weight - 2.0 / 3.0).abs() < 1e-15);
        assert!((atoms[1].weight - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tilted_drift_identity_uses_minus_kappa() {
        let envs = [
            two_atoms(),
            EnvSpec::table(&[(0.5, 1.0, 0.3), (4.0, 1.0, 0.7)]).unwrap(),
            EnvSpec::log_normal(0.5, 0.6, BRule::Constant { b: 1.0 }).unwrap(),
        ];
        for env in &envs {
            let kappa = env.kappa().unwrap();
            let tilted = env.tilt().unwrap();
            let lhs = -tilted.mean_log_a();
            // E[(1/A) log(1/A)] = e^{psi(1)} psi'(1)
            let base = kappa.exp() * env.psi_prime(1.0).unwrap();
            assert!((lhs - (-kappa).exp() * base).abs() < 1e-12);
        }
    }

    #[test]
    fn tilt_round_trip_and_support() {
        let env = EnvSpec::table(&[(0.5, 1.0, 0.2), (4.0, 0.5, 0.5), (1.5, 0.25, 0.3)]).unwrap();
        let there = env.tilt().unwrap();
        let back = there.tilt_by(-1.0).unwrap();
        for (x, y) in env.atoms().unwrap().iter().zip(back.atoms().unwrap()) {
            assert_eq!((x.a, x.b), (y.a, y.b));
            assert!((x.weight - y.weight).abs() < 1e-12);
        }
        let s0: Vec<_> = env.atoms().unwrap().iter().map(|a| (a.a, a.b)).collect();
        let s1: Vec<_> = there.atoms().unwrap().iter().map(|a| (a.a, a.b)).collect();
        assert_eq!(s0, s1);
    }

    #[test]
    fn log_normal_tilt_shifts_mean() {
        let env = EnvSpec::log_normal(0.5, 0.6, BRule::Constant { b: 1.0 }).unwrap();
        let t = env.tilt().unwrap();
        match t.variant {
            EnvVariant::LogNormalA { mu, sigma, .. } => {
                assert!((mu - (0.5 - 0.36)).abs() < 1e-15);
                assert_eq!(sigma, 0.6);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn degenerate_line_detection() {
        let tol = Tolerances::DEFAULT;
        let c = EnvSpec::constant(0.5, 0.5).unwrap();
        assert!((c.degenerate_line(&tol).unwrap() - 1.0).abs() < 1e-15);
        let t = EnvSpec::table(&[(0.25, 1.5, 0.4), (0.5, 1.0, 0.6)]).unwrap();
        assert!((t.degenerate_line(&tol).unwrap() - 2.0).abs() < 1e-15);
        let m = EnvSpec::table(&[(2.0, 1.0, 0.4), (3.0, 2.0, 0.6)]).unwrap();
        assert!((m.degenerate_line(&tol).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(two_atoms().degenerate_line(&tol), None);
        assert_eq!(EnvSpec::constant(1.0, 1.0).unwrap().degenerate_line(&tol), None);
    }

    #[test]
    fn atoms_are_canonical() {
        let a = EnvSpec::table(&[(2.0, 1.0, 0.25), (0.5, 1.0, 0.5), (2.0, 1.0, 0.25)]).unwrap();
        let atoms = a.atoms().unwrap();
        assert_eq!(atoms.len(), 2);
        assert_eq!(atoms[0].a, 0.5);
        assert_eq!(atoms[1].weight, 0.5);
    }
}
