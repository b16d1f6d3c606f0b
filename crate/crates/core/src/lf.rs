//! Linear fractional laws `LF(a, b)` on the nonnegative integers.
//!
//! The generating function `f` of `LF(a, b)` is defined through
//! `1 / (1 - f(s)) = a / (1 - s) + b`, which makes `LF(a, b)` a mixture of a
//! point mass at zero (weight `(a+b-1)/(a+b)`) and a positive geometric law
//! with success probability `a / (a + b)`.
//!
//! Parameters are stored as logarithms so that iterated laws such as
//! `LF(a^n, b(1 + a + ... + a^(n-1)))` stay representable for large `n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ln_geometric_sum, log_add_exp};
use crate::tolerance::Tolerances;

/// Positive geometric law `Geom+(p)` with pmf `p (1-p)^(k-1)`, `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomPlus {
    p: f64,
}

impl GeomPlus {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "p",
                value: p,
                reason: "geometric success probability must lie in (0, 1]",
            });
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.p
    }

    fn ln_fail(&self) -> f64 {
        (-self.p).ln_1p()
    }

    pub fn pmf(&self, k: u64) -> f64 {
        match k {
            0 => 0.0,
            1 => self.p,
            _ if self.p == 1.0 => 0.0,
            _ => self.p * ((k - 1) as f64 * self.ln_fail()).exp(),
        }
    }

    /// `P(X <= k)`.
    pub fn cdf(&self, k: u64) -> f64 {
        1.0 - self.tail(k)
    }

    /// `P(X > k) = (1-p)^k`.
    pub fn tail(&self, k: u64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        if self.p == 1.0 {
            return 0.0;
        }
        (k as f64 * self.ln_fail()).exp()
    }

    pub fn gf(&self, s: f64) -> Result<f64> {
        check_unit(s)?;
        Ok(self.p * s / (1.0 - (1.0 - self.p) * s))
    }

    /// Law with generating function `f(gamma s) / f(gamma)`, i.e.
    /// `Geom+(1 - (1-p) gamma)`.
    pub fn conjugate(&self, gamma: f64) -> Result<GeomPlus> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Domain {
                name: "gamma",
                value: gamma,
                domain: "(0, 1]",
            });
        }
        GeomPlus::new(1.0 - (1.0 - self.p) * gamma)
    }

    /// Smallest `k` with `P(X > k) < tail`.
    pub fn support_cap(&self, tail: f64) -> u64 {
        if self.p == 1.0 {
            return 1;
        }
        let k = (tail.ln() / self.ln_fail()).ceil();
        if k.is_finite() && k > 1.0 {
            k as u64
        } else {
            1
        }
    }

    /// Inverse-transform draw from one uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        self.quantile_at(u)
    }

    pub(crate) fn quantile_at(&self, u: f64) -> u64 {
        if self.p == 1.0 {
            return 1;
        }
        // 1 - u lies in (0, 1]
        let k = ((1.0 - u).ln() / self.ln_fail()).floor();
        1u64.saturating_add(k as u64)
    }
}

/// Mixture form `w0 * delta_0 + (1 - w0) * Geom+(p)` of a linear fractional law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfMixture {
    pub w0: f64,
    pub geom: GeomPlus,
}

impl LfMixture {
    pub fn new(w0: f64, geom: GeomPlus) -> Result<Self> {
        if !(0.0..1.0).contains(&w0) {
            return Err(Error::InvalidParameter {
                name: "w0",
                value: w0,
                reason: "zero-class mass must lie in [0, 1)",
            });
        }
        Ok(Self { w0, geom })
    }

    pub fn pmf(&self, k: u64) -> f64 {
        if k == 0 {
            self.w0
        } else {
            (1.0 - self.w0) * self.geom.pmf(k)
        }
    }

    pub fn to_lf(&self) -> Result<LinearFractional> {
        LinearFractional::from_params(self.w0, self.geom.p())
    }
}

/// Mean, second factorial moment and extinction probability of a fixed law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfMoments {
    pub mean: f64,
    pub second_factorial: f64,
    /// Extinction probability of a Galton-Watson process with this offspring
    /// law. Equals `(a+b-1)/b` when `a < 1` and `1` for `a >= 1`, except for
    /// the point mass at one which never dies out.
    pub extinction_prob: f64,
}

/// The law `LF(a, b)`; `a > 0`, `b >= 0`, `a + b >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LfParams", into = "LfParams")]
pub struct LinearFractional {
    ln_a: f64,
    ln_b: f64,
    // plain values, exact when built from them; may overflow for huge laws
    a: f64,
    b: f64,
}

#[derive(Serialize, Deserialize)]
struct LfParams {
    a: f64,
    b: f64,
}

impl TryFrom<LfParams> for LinearFractional {
    type Error = Error;
    fn try_from(p: LfParams) -> Result<Self> {
        LinearFractional::new(p.a, p.b)
    }
}

impl From<LinearFractional> for LfParams {
    fn from(lf: LinearFractional) -> Self {
        LfParams {
            a: lf.a(),
            b: lf.b(),
        }
    }
}

fn check_unit(s: f64) -> Result<()> {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "s",
            value: s,
            domain: "[0, 1]",
        })
    }
}

impl LinearFractional {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "a",
                value: a,
                reason: "must be positive and finite",
            });
        }
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "b",
                value: b,
                reason: "must be nonnegative and finite",
            });
        }
        let mut lf = Self::from_log_params(a.ln(), b.ln())?;
        lf.a = a;
        lf.b = b;
        Ok(lf)
    }

    /// Builds `LF(e^ln_a, e^ln_b)`; `ln_b = -inf` encodes `b = 0`.
    pub fn from_log_params(ln_a: f64, ln_b: f64) -> Result<Self> {
        if !ln_a.is_finite() {
            return Err(Error::InvalidParameter {
                name: "ln_a",
                value: ln_a,
                reason: "must be finite",
            });
        }
        if ln_b.is_nan() || ln_b == f64::INFINITY {
            return Err(Error::InvalidParameter {
                name: "ln_b",
                value: ln_b,
                reason: "must be finite or -inf",
            });
        }
        let ln_total = log_add_exp(ln_a, ln_b);
        if ln_total < -Tolerances::DEFAULT.unit_mass_slack {
            return Err(Error::InvalidParameter {
                name: "a+b",
                value: ln_total.exp(),
                reason: "a + b must be at least 1",
            });
        }
        Ok(Self::raw(ln_a, ln_b))
    }

    fn raw(ln_a: f64, ln_b: f64) -> Self {
        Self {
            ln_a,
            ln_b,
            a: ln_a.exp(),
            b: ln_b.exp(),
        }
    }

    /// Inverse of [`to_mixture`](Self::to_mixture):
    /// `a = p / (1 - p0)`, `b = (1 - p) / (1 - p0)`.
    pub fn from_params(p0: f64, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p0) {
            return Err(Error::InvalidParameter {
                name: "p0",
                value: p0,
                reason: "must lie in [0, 1)",
            });
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "p",
                value: p,
                reason: "must lie in (0, 1]",
            });
        }
        let ln_scale = -(-p0).ln_1p();
        let ln_b = if p == 1.0 {
            f64::NEG_INFINITY
        } else {
            (-p).ln_1p() + ln_scale
        };
        Self::from_log_params(p.ln() + ln_scale, ln_b)
    }

    /// The point mass at one, `LF(1, 0)`.
    pub fn identity() -> Self {
        Self::raw(0.0, f64::NEG_INFINITY)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn ln_a(&self) -> f64 {
        self.ln_a
    }

    pub fn ln_b(&self) -> f64 {
        self.ln_b
    }

    /// `ln(a + b)`, clamped at zero.
    pub fn ln_total(&self) -> f64 {
        log_add_exp(self.ln_a, self.ln_b).max(0.0)
    }

    /// Mass at zero, `(a + b - 1) / (a + b)`.
    pub fn zero_mass(&self) -> f64 {
        -(-self.ln_total()).exp_m1()
    }

    /// Success probability `a / (a + b)` of the geometric component.
    pub fn geom_param(&self) -> f64 {
        (self.ln_a - self.ln_total()).exp().min(1.0)
    }

    pub fn to_mixture(&self) -> LfMixture {
        LfMixture {
            w0: self.zero_mass(),
            geom: GeomPlus {
                p: self.geom_param(),
            },
        }
    }

    /// Generating function at `s` in `[0, 1]`.
    pub fn gf(&self, s: f64) -> Result<f64> {
        check_unit(s)?;
        let p0 = self.zero_mass();
        let p = self.geom_param();
        Ok(p0 + (1.0 - p0) * p * s / (1.0 - (1.0 - p) * s))
    }

    pub fn pmf(&self, k: u64) -> f64 {
        self.to_mixture().pmf(k)
    }

    pub fn cdf(&self, k: u64) -> f64 {
        1.0 - self.tail(k)
    }

    /// `P(X > k)`.
    pub fn tail(&self, k: u64) -> f64 {
        let m = self.to_mixture();
        (1.0 - m.w0) * m.geom.tail(k)
    }

    pub fn moments(&self) -> LfMoments {
        let mean = (-self.ln_a).exp();
        let second_factorial = 2.0 * (self.ln_b - 2.0 * self.ln_a).exp();
        let p0 = self.zero_mass();
        let extinction_prob = if p0 == 0.0 {
            0.0
        } else if self.ln_a < 0.0 {
            // (a + b - 1) / b, written as p0 (a + b) / b
            (p0 * (self.ln_total() - self.ln_b).exp()).min(1.0)
        } else {
            1.0
        };
        LfMoments {
            mean,
            second_factorial,
            extinction_prob,
        }
    }

    /// Composition `self ∘ inner`, the law of a `self`-generation followed by
    /// an `inner`-generation: `LF(a1 a2, a1 b2 + b1)`.
    pub fn compose(&self, inner: &LinearFractional) -> LinearFractional {
        LinearFractional::raw(
            self.ln_a + inner.ln_a,
            log_add_exp(self.ln_a + inner.ln_b, self.ln_b),
        )
    }

    /// Law of `Z_n` for a Galton-Watson process with offspring law `self`:
    /// `LF(a^n, b(a^(n-1) + ... + 1))`, in closed form. `n = 0` gives the
    /// point mass at one.
    pub fn iterate(&self, n: u64) -> LinearFractional {
        if n == 0 {
            return Self::identity();
        }
        if n == 1 {
            return *self;
        }
        LinearFractional::raw(
            n as f64 * self.ln_a,
            self.ln_b + ln_geometric_sum(self.ln_a, n),
        )
    }

    /// Smallest `k` such that `P(X > k) < tail`.
    pub fn support_cap(&self, tail: f64) -> u64 {
        let m = self.to_mixture();
        if m.w0 == 1.0 {
            return 0;
        }
        m.geom.support_cap(tail / (1.0 - m.w0))
    }

    /// One uniform decides zero versus positive, a second one drives the
    /// geometric inverse transform. Both are always consumed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let split: f64 = rng.random();
        let u: f64 = rng.random();
        let m = self.to_mixture();
        if split < m.w0 {
            0
        } else {
            m.geom.quantile_at(u)
        }
    }
}
