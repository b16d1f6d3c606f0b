//! One generation of a linear-fractional branching process.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::affine::EnvPair;
use crate::lf::GeomPlus;

/// Largest population carried exactly: `2^63 - 1`.
pub const POPULATION_CAP: u64 = i64::MAX as u64;

/// Below this many summands a negative binomial is drawn as a plain sum of
/// geometrics.
const DIRECT_SUM_LIMIT: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub z: u64,
    /// The true size exceeded [`POPULATION_CAP`] and was clamped.
    pub saturated: bool,
}

impl Generation {
    fn capped(total: f64) -> Self {
        if total >= POPULATION_CAP as f64 {
            Generation {
                z: POPULATION_CAP,
                saturated: true,
            }
        } else {
            Generation {
                z: total as u64,
                saturated: false,
            }
        }
    }
}

/// Sum of `m` independent `Geom+(p)` variables.
pub fn sum_of_geometrics<R: Rng + ?Sized>(m: u64, p: f64, rng: &mut R) -> Generation {
    if m == 0 {
        return Generation {
            z: 0,
            saturated: false,
        };
    }
    if p >= 1.0 {
        return Generation::capped(m as f64);
    }
    if m <= DIRECT_SUM_LIMIT {
        let g = GeomPlus::new(p).expect("p in (0, 1)");
        let mut total: u64 = 0;
        for _ in 0..m {
            total = total.saturating_add(g.quantile_at(rng.random()));
        }
        return if total > POPULATION_CAP {
            Generation {
                z: POPULATION_CAP,
                saturated: true,
            }
        } else {
            Generation {
                z: total,
                saturated: false,
            }
        };
    }
    // failures before the m-th success: Poisson with a Gamma(m, (1-p)/p) rate
    let scale = (1.0 - p) / p;
    let lambda = Gamma::new(m as f64, scale)
        .expect("positive shape and scale")
        .sample(rng);
    if lambda.is_nan() || lambda >= Poisson::<f64>::MAX_LAMBDA {
        return Generation {
            z: POPULATION_CAP,
            saturated: true,
        };
    }
    let failures = if lambda > 0.0 {
        Poisson::new(lambda).expect("finite rate").sample(rng)
    } else {
        0.0
    };
    Generation::capped(m as f64 + failures)
}

/// `Z_{n+1}` given `Z_n = z` when every individual reproduces according to
/// `LF(A, B)`: `Binomial(z, 1/(A+B))` individuals have a positive number of
/// children, each a `Geom+(A/(A+B))` count.
pub fn step_generation<R: Rng + ?Sized>(z: u64, pair: &EnvPair, rng: &mut R) -> Generation {
    if z == 0 {
        return Generation {
            z: 0,
            saturated: false,
        };
    }
    let c = pair.c();
    let positive = (1.0 / c).min(1.0);
    let m = if positive >= 1.0 {
        z
    } else {
        Binomial::new(z, positive)
            .expect("probability in [0, 1]")
            .sample(rng)
    };
    sum_of_geometrics(m, (pair.a() / c).min(1.0), rng)
}
