//! Empirical laws, Kolmogorov-Smirnov tests and total variation distances.

use serde::{Deserialize, Serialize};

/// Counts of a sample of nonnegative integers up to `cap`; larger values are
/// lumped into `tail`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLaw {
    pub counts: Vec<u64>,
    pub tail: u64,
    pub total: u64,
}

impl EmpiricalLaw {
    pub fn from_samples<I: IntoIterator<Item = u64>>(samples: I, cap: u64) -> Self {
        let mut counts = vec![0u64; cap as usize + 1];
        let mut tail = 0;
        let mut total = 0;
        for x in samples {
            total += 1;
            if x <= cap {
                counts[x as usize] += 1;
            } else {
                tail += 1;
            }
        }
        Self {
            counts,
            tail,
            total,
        }
    }

    pub fn cap(&self) -> u64 {
        self.counts.len() as u64 - 1
    }

    pub fn pmf(&self, k: u64) -> f64 {
        if self.total == 0 || k > self.cap() {
            return 0.0;
        }
        self.counts[k as usize] as f64 / self.total as f64
    }

    /// Mass beyond `cap`.
    pub fn tail_mass(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.tail as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Effective sample size used for the p-value.
    pub n_eff: f64,
}

impl KsResult {
    fn new(statistic: f64, n_eff: f64) -> Self {
        Self {
            statistic,
            p_value: kolmogorov_p_value(statistic, n_eff),
            n_eff,
        }
    }

    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Asymptotic `P(sqrt(n) D > ...)` with Stephens' small-sample correction.
pub fn kolmogorov_p_value(d: f64, n_eff: f64) -> f64 {
    if n_eff <= 0.0 {
        return 1.0;
    }
    let sq = n_eff.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample test of integer data against a distribution function on the
/// integers; the supremum is taken over integer points.
pub fn ks_discrete(samples: &[u64], cdf: impl Fn(u64) -> f64) -> KsResult {
    let n = samples.len();
    if n == 0 {
        return KsResult::new(0.0, 0.0);
    }
    let mut xs = samples.to_vec();
    xs.sort_unstable();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    if xs[0] > 0 {
        d = d.max(cdf(xs[0] - 1));
    }
    let mut i = 0;
    while i < n {
        let k = xs[i];
        let mut j = i;
        while j < n && xs[j] == k {
            j += 1;
        }
        let fn_k = j as f64 / nf;
        d = d.max((fn_k - cdf(k)).abs());
        // just before the next sample value the empirical cdf is still fn_k
        if j < n && xs[j] > k + 1 {
            d = d.max((fn_k - cdf(xs[j] - 1)).abs());
        }
        i = j;
    }
    KsResult::new(d, nf)
}

/// One-sample test against a continuous distribution function.
pub fn ks_continuous(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let n = samples.len();
    if n == 0 {
        return KsResult::new(0.0, 0.0);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    KsResult::new(d, nf)
}

/// Two-sample test; ties are handled by stepping both samples together.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return KsResult::new(0.0, 0.0);
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (nf, mf) = (n as f64, m as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / nf - j as f64 / mf).abs());
    }
    KsResult::new(d, nf * mf / (nf + mf))
}

/// Total variation distance with the mass that could not be compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvReport {
    pub distance: f64,
    /// Exact mass dropped by truncating an unbounded pmf.
    pub tail_slack: f64,
}

/// A law on the nonnegative integers for [`tv_distance`].
pub enum Law<'a> {
    Empirical(&'a EmpiricalLaw),
    Pmf(&'a dyn Fn(u64) -> f64),
}

/// Largest index needed so that the pmf's remaining mass is below `tail`.
fn pmf_cutoff(pmf: &dyn Fn(u64) -> f64, tail: f64) -> (u64, f64) {
    let mut acc = 0.0;
    let mut k = 0u64;
    loop {
        acc += pmf(k);
        if 1.0 - acc < tail || k >= 50_000_000 {
            return (k, (1.0 - acc).max(0.0));
        }
        k += 1;
    }
}

/// `1/2 sum |p_k - q_k|`; unbounded pmfs are truncated once their remaining
/// mass drops below `tail`, and the dropped mass is reported separately.
pub fn tv_distance(a: Law<'_>, b: Law<'_>, tail: f64) -> TvReport {
    let cut = |law: &Law<'_>| -> (u64, f64) {
        match law {
            Law::Empirical(e) => (e.cap(), 0.0),
            Law::Pmf(p) => pmf_cutoff(*p, tail),
        }
    };
    let (ka, sa) = cut(&a);
    let (kb, sb) = cut(&b);
    let k_max = ka.max(kb);
    let eval = |law: &Law<'_>, k: u64| match law {
        Law::Empirical(e) => e.pmf(k),
        Law::Pmf(p) => p(k),
    };
    let mut sum = crate::numeric::KahanSum::new();
    for k in 0..=k_max {
        sum.add((eval(&a, k) - eval(&b, k)).abs());
    }
    let beyond = |law: &Law<'_>| match law {
        Law::Empirical(e) => e.tail_mass(),
        Law::Pmf(_) => 0.0,
    };
    sum.add((beyond(&a) - beyond(&b)).abs());
    TvReport {
        distance: 0.5 * sum.value(),
        tail_slack: sa + sb,
    }
}
