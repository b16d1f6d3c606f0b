//! Small floating point helpers shared by the exact and Monte Carlo layers.

/// `ln(e^x + e^y)`, exact for infinite arguments.
pub fn log_add_exp(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    if hi == f64::INFINITY {
        return f64::INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^x - e^y)` for `x >= y`.
pub fn log_sub_exp(x: f64, y: f64) -> f64 {
    debug_assert!(x >= y || x.is_nan() || y.is_nan());
    if y == f64::NEG_INFINITY {
        return x;
    }
    if x == y {
        return f64::NEG_INFINITY;
    }
    x + ln_one_minus_exp(y - x)
}

/// `ln(1 - e^t)` for `t <= 0`, accurate near both ends.
pub fn ln_one_minus_exp(t: f64) -> f64 {
    if t > -std::f64::consts::LN_2 {
        (-t.exp_m1()).ln()
    } else {
        (-t.exp()).ln_1p()
    }
}

/// `ln(1 + a + a^2 + ... + a^(n-1))` given `ln a`.
pub fn ln_geometric_sum(ln_a: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    if ln_a == 0.0 {
        return nf.ln();
    }
    let total = nf * ln_a;
    if total.abs() < 700.0 {
        // (a^n - 1) / (a - 1); both factors share a sign.
        return (total.exp_m1() / ln_a.exp_m1()).ln();
    }
    if ln_a > 0.0 {
        total + ln_one_minus_exp(-total) - ln_a.exp_m1().ln()
    } else {
        ln_one_minus_exp(total) - (-ln_a.exp_m1()).ln()
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// Mean and standard error of the mean, compensated and order-deterministic.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(xs.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
    let var = ss / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 2.0), 2.0);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn geometric_sum_matches_direct() {
        for &a in &[0.3f64, 0.5, 0.999, 1.0, 1.001, 2.0, 7.5] {
            for n in [1u64, 2, 3, 10, 40] {
                let direct: f64 = (0..n).map(|k| a.powi(k as i32)).sum();
                let got = ln_geometric_sum(a.ln(), n).exp();
                assert!((got - direct).abs() <= 1e-12 * direct, "a={a} n={n}");
            }
        }
    }

    #[test]
    fn geometric_sum_large_n_does_not_overflow() {
        let v = ln_geometric_sum(2f64.ln(), 5000);
        assert!((v - 5000.0 * 2f64.ln()).abs() < 1e-9);
        let w = ln_geometric_sum(0.5f64.ln(), 5000);
        assert!((w - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }
}
