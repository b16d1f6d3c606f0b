//! Monte Carlo checks of the closed-form quenched and annealed results.

use serde::{Deserialize, Serialize};

use crate::affine::{classify_with, dual_perpetuity_tail, perpetuity_tail, Label, PathState, SubCase};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::lf::GeomPlus;
use crate::numeric::{log_add_exp, mean_and_stderr};
use crate::quenched::{
    eve_of_extinction, martingale_limit_law, reduced_law, reduced_law_reversed, reduced_offspring_law, snapshot,
    EnvPath, MartingaleLimit,
};
use crate::rng;
use crate::sim::batch::{collect_until, run_replicates, simulate_quenched, SimOptions};
use crate::sim::stats::{ks_continuous, ks_discrete, KsResult};
use crate::sim::step::{step_generation, sum_of_geometrics};
use crate::tolerance::Tolerances;

/// Budget for the tail sums used to report limits.
const TAIL_EPS: f64 = 1e-12;
const TAIL_STEPS: usize = 1_000_000;

fn require(env: &EnvSpec, label: Label, operation: &'static str, seed: u64) -> Result<SubCase> {
    let class = classify_with(env, &Tolerances::DEFAULT, seed)?;
    if class.label != label {
        let expected = match label {
            Label::C1 => "supercritical (C1)",
            Label::C2 => "subcritical (C2)",
            Label::C3 => "critical (C3)",
        };
        return Err(Error::WrongRegime {
            operation,
            expected,
            found: class.sub_case.to_string(),
        });
    }
    Ok(class.sub_case)
}

/// Annealed survival probability by importance sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub n: usize,
    pub reps: u64,
    pub kappa: f64,
    pub p_hat: f64,
    pub stderr: f64,
    /// `e^{-kappa n} p_hat`, the tilted mean of `1/(1 + R_n^(-1))`.
    pub scaled: f64,
    pub scaled_stderr: f64,
    /// `e^{kappa n}`, never exceeded by `p_hat`.
    pub upper: f64,
}

/// `P(Z_n > 0) = e^{kappa n} E^[1/(1 + R_n^(-1))]`, with only the dual sum
/// simulated under the tilted environment.
pub fn survival_importance(env: &EnvSpec, n: usize, reps: u64, opts: &SimOptions) -> Result<SurvivalEstimate> {
    let kappa = env.kappa()?;
    let upper = (kappa * n as f64).exp();
    if n == 0 {
        return Ok(SurvivalEstimate {
            n,
            reps,
            kappa,
            p_hat: 1.0,
            stderr: 0.0,
            scaled: 1.0,
            scaled_stderr: 0.0,
            upper,
        });
    }
    let tilted = env.tilt()?;
    let xs = run_replicates(reps, opts.workers, |rep| {
        let mut rng = rng::stream(opts.seed, "survival", rep);
        let mut st = PathState::initial();
        for _ in 0..n {
            st = st.step(&tilted.sample_pair(&mut rng));
        }
        (-log_add_exp(0.0, st.ln_rdual())).exp()
    });
    let (scaled, scaled_stderr) = mean_and_stderr(&xs);
    if !scaled.is_finite() || !upper.is_finite() {
        return Err(Error::MomentDiverged(format!("survival estimate at n = {n}")));
    }
    Ok(SurvivalEstimate {
        n,
        reps,
        kappa,
        p_hat: upper * scaled,
        stderr: upper * scaled_stderr,
        scaled,
        scaled_stderr,
        upper,
    })
}

fn survivor_chunk(target: usize, p: f64) -> u64 {
    ((target as f64 / p.max(1e-9)) * 1.05).ceil().min(1e9) as u64 + 1000
}

/// Population size after `n` generations along `pairs`, starting from one.
fn population<R: rand::Rng>(pairs: &[crate::affine::EnvPair], rng: &mut R) -> u64 {
    let mut z = 1u64;
    for pair in pairs {
        if z == 0 {
            break;
        }
        z = step_generation(z, pair, rng).z;
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YaglomReport {
    pub sub_case: SubCase,
    pub n: usize,
    pub path: Vec<crate::affine::EnvPair>,
    pub survivors: usize,
    pub replicates_used: u64,
    /// `1/(1 + R_n^(-1))`, the exact parameter along the reversed path.
    pub param: f64,
    pub ks: KsResult,
    /// The parameter for `k = 1..=n`.
    pub param_sequence: Vec<f64>,
    /// The same parameter with the dual sum continued to convergence.
    pub limit_param: Option<f64>,
    pub limit_note: Option<String>,
    /// The sequence is nonincreasing and stays above the limit.
    pub monotone: bool,
}

/// Samples one environment path, simulates the process along its reversal
/// and compares the survivors with `Geom+(1/(1 + R_n^(-1)))`.
pub fn yaglom_quenched_check(env: &EnvSpec, n: usize, survivors: usize, opts: &SimOptions) -> Result<YaglomReport> {
    let sub_case = require(env, Label::C2, "yaglom", opts.seed)?;
    let path = EnvPath::sample(env, n, &mut rng::stream(opts.seed, "yaglom-env", 0));
    let reversed = path.reversed_prefix(n)?;
    let snap = snapshot(&path, n)?;
    let param = snap.reversed_cond_survival.p();
    let p_survive = snapshot(&reversed, n)?.survival;
    let chunk = survivor_chunk(survivors, p_survive);
    let pairs = reversed.pairs();
    let (alive, used) = collect_until(survivors, chunk, chunk.saturating_mul(100), opts.workers, |rep| {
        let mut rng = rng::stream(opts.seed, "yaglom", rep);
        let z = population(pairs, &mut rng);
        (z > 0).then_some(z)
    })?;
    let law = snap.reversed_cond_survival;
    let ks = ks_discrete(&alive, |k| law.cdf(k));

    let param_sequence = (1..=n)
        .map(|k| path.state(k).map(|s| (-log_add_exp(0.0, s.ln_rdual())).exp()))
        .collect::<Result<Vec<f64>>>()?;
    let mut tail_rng = rng::stream(opts.seed, "yaglom-tail", 0);
    let (limit_param, limit_note) = match dual_perpetuity_tail(path.last_state(), env, TAIL_EPS, TAIL_STEPS, &mut tail_rng)
    {
        Ok(t) => (Some(1.0 / (1.0 + t.value)), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let floor = limit_param.unwrap_or(0.0) - 1e-12;
    let monotone = param_sequence.windows(2).all(|w| w[1] <= w[0] + 1e-15)
        && param_sequence.iter().all(|&p| p >= floor);
    Ok(YaglomReport {
        sub_case,
        n,
        path: path.pairs().to_vec(),
        survivors: alive.len(),
        replicates_used: used,
        param,
        ks,
        param_sequence,
        limit_param,
        limit_note,
        monotone,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveReport {
    pub n: usize,
    pub l: usize,
    pub accepted: usize,
    pub replicates_used: u64,
    pub param: f64,
    pub ks: KsResult,
}

/// Law of `Z_n` given `Z_n > 0` and `Z_{n+l} = 0`, by filtering simulated
/// histories along `path`.
pub fn eve_check(path: &EnvPath, n: usize, l: usize, accepted: usize, opts: &SimOptions) -> Result<EveReport> {
    const MIN_ACCEPTED: usize = 1000;
    let eve = eve_of_extinction(path, n, l)?;
    let (head, tail) = path.pairs()[..n + l].split_at(n);
    let snap = snapshot(path, n)?;
    let chunk = survivor_chunk(accepted, snap.survival * 0.5);
    let (zs, used) = collect_until(accepted.max(MIN_ACCEPTED), chunk, chunk.saturating_mul(100), opts.workers, |rep| {
        let mut rng = rng::stream(opts.seed, "eve", rep);
        let z = population(head, &mut rng);
        if z == 0 {
            return None;
        }
        let mut later = z;
        for pair in tail {
            later = step_generation(later, pair, &mut rng).z;
        }
        (later == 0).then_some(z)
    })?;
    let law = GeomPlus::new(eve.param_fw)?;
    Ok(EveReport {
        n,
        l,
        accepted: zs.len(),
        replicates_used: used,
        param: eve.param_fw,
        ks: ks_discrete(&zs, |k| law.cdf(k)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub n: usize,
    pub reps: u64,
    /// Records that hit the population cap, left out of every statistic.
    pub saturated: u64,
    pub mean_w: f64,
    pub mean_w_stderr: f64,
    pub r_inf: f64,
    pub limit_w0: f64,
    pub limit_rate: f64,
    pub zero_frequency: f64,
    /// `(frequency - w0) / sd` under the binomial null.
    pub zero_z_score: f64,
    pub ks_positive: KsResult,
}

/// `W_n = Pi_n Z_n` along `path` against the mixture
/// `(1 - 1/R) delta_0 + (1/R) Exp(1/R)` with `R` the perpetuity of the path
/// continued with pairs from `env`.
pub fn martingale_check(
    path: &EnvPath,
    env: &EnvSpec,
    n: usize,
    reps: u64,
    opts: &SimOptions,
) -> Result<MartingaleReport> {
    let prefix = EnvPath::new(path.pairs()[..n.min(path.len())].to_vec());
    if n > path.len() {
        return Err(Error::IndexOutOfRange {
            index: n,
            limit: path.len(),
        });
    }
    let mut tail_rng = rng::stream(opts.seed, "martingale-tail", 0);
    let r_inf = perpetuity_tail(path.last_state(), env, TAIL_EPS, TAIL_STEPS, &mut tail_rng)?;
    let limit: MartingaleLimit = martingale_limit_law(r_inf.value)?;
    let recs = simulate_quenched(&prefix, n, reps, opts)?;
    let saturated = recs.iter().filter(|r| r.saturated).count() as u64;
    let kept: Vec<_> = recs.iter().filter(|r| !r.saturated).collect();
    let ws: Vec<f64> = kept.iter().map(|r| r.z_final as f64 * r.log_pi.exp()).collect();
    let (mean_w, mean_w_stderr) = mean_and_stderr(&ws);
    let total = ws.len() as f64;
    let zeros = ws.iter().filter(|&&w| w == 0.0).count() as f64;
    let zero_frequency = zeros / total;
    let sd = (limit.w0 * (1.0 - limit.w0) / total).sqrt();
    let zero_z_score = if sd > 0.0 {
        (zero_frequency - limit.w0) / sd
    } else if zero_frequency == limit.w0 {
        0.0
    } else {
        f64::INFINITY
    };
    let positive: Vec<f64> = ws.iter().copied().filter(|&w| w > 0.0).collect();
    let ks_positive = ks_continuous(&positive, |w| limit.positive_cdf(w));
    Ok(MartingaleReport {
        n,
        reps,
        saturated,
        mean_w,
        mean_w_stderr,
        r_inf: r_inf.value,
        limit_w0: limit.w0,
        limit_rate: limit.exp_rate,
        zero_frequency,
        zero_z_score,
        ks_positive,
    })
}

/// Offspring parameters of the reduced process for generations `1..=n`.
fn reduced_params(path: &EnvPath, n: usize) -> Result<Vec<f64>> {
    (1..=n)
        .map(|m| reduced_offspring_law(path, m - 1, m, n).map(|g| g.p()))
        .collect()
}

/// Trajectories `(Z_{0,n}, ..., Z_{n,n})` of the reduced process, each
/// individual at `m - 1` having `Geom+` many reduced children at `m`.
pub fn reduced_simulate(path: &EnvPath, n: usize, reps: u64, opts: &SimOptions) -> Result<Vec<Vec<u64>>> {
    path.state(n)?;
    let params = reduced_params(path, n)?;
    Ok(run_replicates(reps, opts.workers, |rep| {
        let mut rng = rng::stream(opts.seed, "reduced", rep);
        let mut z = 1u64;
        let mut traj = Vec::with_capacity(n + 1);
        traj.push(z);
        for &p in &params {
            z = sum_of_geometrics(z, p, &mut rng).z;
            traj.push(z);
        }
        traj
    }))
}

/// One row of the branchless trend table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchlessRow {
    pub m: usize,
    pub gap: usize,
    /// `P(Z_{m,n} > 1)` along the path and along its reversal.
    pub exact_forward: f64,
    pub exact_reversed: f64,
    pub freq_forward: f64,
    pub freq_reversed: f64,
}

/// How often more than one generation-`m` individual has descendants at
/// `n`, as `n - m` shrinks.
pub fn branchless_table(path: &EnvPath, n: usize, reps: u64, opts: &SimOptions) -> Result<Vec<BranchlessRow>> {
    let reversed = path.reversed_prefix(n)?;
    let fw = reduced_simulate(path, n, reps, opts)?;
    let rev = reduced_simulate(&reversed, n, reps, opts)?;
    let freq = |trajs: &[Vec<u64>], m: usize| {
        trajs.iter().filter(|t| t[m] > 1).count() as f64 / trajs.len().max(1) as f64
    };
    (0..=n)
        .map(|m| {
            Ok(BranchlessRow {
                m,
                gap: n - m,
                exact_forward: 1.0 - reduced_law(path, m, n)?.p(),
                exact_reversed: 1.0 - reduced_law_reversed(path, m, n)?.p(),
                freq_forward: freq(&fw, m),
                freq_reversed: freq(&rev, m),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KozlovRow {
    pub n: usize,
    pub p_hat: f64,
    pub stderr: f64,
    pub scaled: f64,
    pub scaled_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KozlovScan {
    pub sub_case: SubCase,
    /// `0 < E log^2 A`, `E B` and `E B |log A|` finite.
    pub moment_conditions: bool,
    pub notes: Vec<String>,
    pub rows: Vec<KozlovRow>,
}

/// Annealed survival `E[1/(Pi_n + R_n)]` of a critical environment over a
/// grid of `n`, with `sqrt(n)` times it.
pub fn kozlov_scan(env: &EnvSpec, n_grid: &[usize], reps: u64, opts: &SimOptions) -> Result<KozlovScan> {
    let sub_case = require(env, Label::C3, "kozlov", opts.seed)?;
    let mut notes = Vec::new();
    let log_sq = env.mean_log_sq_a();
    let moment_conditions =
        log_sq > 0.0 && log_sq.is_finite() && env.mean_b().is_finite() && env.mean_b_abs_log_a().is_finite();
    if !moment_conditions {
        notes.push("moment conditions fail: log A must be non-degenerate with E B |log A| finite".into());
    }
    let mut grid: Vec<usize> = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let Some(&n_max) = grid.last() else {
        return Ok(KozlovScan {
            sub_case,
            moment_conditions,
            notes,
            rows: Vec::new(),
        });
    };
    let samples = run_replicates(reps, opts.workers, |rep| {
        let mut rng = rng::stream(opts.seed, "kozlov", rep);
        let mut st = PathState::initial();
        let mut out = Vec::with_capacity(grid.len());
        let mut next = grid.iter().peekable();
        for k in 0..=n_max {
            if k > 0 {
                st = st.step(&env.sample_pair(&mut rng));
            }
            while next.peek().is_some_and(|&&g| g == k) {
                out.push((-st.ln_pi_plus_r()).exp());
                next.next();
            }
        }
        out
    });
    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            let (p_hat, stderr) = mean_and_stderr(&xs);
            let root = (n as f64).sqrt();
            KozlovRow {
                n,
                p_hat,
                stderr,
                scaled: root * p_hat,
                scaled_stderr: root * stderr,
            }
        })
        .collect();
    Ok(KozlovScan {
        sub_case,
        moment_conditions,
        notes,
        rows,
    })
}
