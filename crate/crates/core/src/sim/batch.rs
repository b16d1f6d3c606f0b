//! Batches of independent replicates, run in parallel with per-replicate
//! random streams so that output never depends on the worker count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine::PathState;
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::quenched::EnvPath;
use crate::rng;
use crate::sim::step::step_generation;

/// Version of the JSONL/CSV record layout.
pub const RECORD_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    /// Keep per-generation population and `log Pi` traces.
    pub trace: bool,
}

impl SimOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            workers: 0,
            trace: false,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }
}

/// Maps `f` over `0..reps` on a pool of `workers` threads, in index order.
pub fn run_replicates<T, F>(reps: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    run_range(0, reps, workers, f)
}

fn run_range<T, F>(start: u64, end: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| (start..end).into_par_iter().map(&f).collect())
}

/// Runs replicates in fixed-size chunks until `target` of them returned
/// `Some`, then keeps the first `target` in index order. The result depends
/// only on `f`, never on scheduling.
pub fn collect_until<T, F>(target: usize, chunk: u64, max_reps: u64, workers: usize, f: F) -> Result<(Vec<T>, u64)>
where
    T: Send,
    F: Fn(u64) -> Option<T> + Sync + Send,
{
    let mut kept = Vec::with_capacity(target);
    let mut start = 0u64;
    while kept.len() < target {
        if start >= max_reps {
            return Err(Error::Inconclusive(format!(
                "only {} of {target} accepted replicates within {max_reps} runs",
                kept.len()
            )));
        }
        let end = (start + chunk.max(1)).min(max_reps);
        for (offset, item) in run_range(start, end, workers, &f).into_iter().enumerate() {
            if let Some(x) = item {
                kept.push(x);
                if kept.len() == target {
                    return Ok((kept, start + offset as u64 + 1));
                }
            }
        }
        start = end;
    }
    Ok((kept, start))
}

/// One simulated population history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub z_final: u64,
    /// The population hit the `2^63 - 1` cap at some generation.
    pub saturated: bool,
    pub survived: bool,
    /// Likelihood ratio of the sampling measure back to the original one;
    /// 1 for plain simulation.
    pub weight: f64,
    /// `log Pi_n` of the environment used.
    pub log_pi: f64,
    /// `R_n` and `R_n^(-1)` of the environment used.
    pub r: f64,
    pub rdual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_trace: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_pi_trace: Option<Vec<f64>>,
}

impl ReplicateRecord {
    pub const CSV_HEADER: &'static str =
        "replicate,z_final,saturated,survived,weight,log_pi,r,rdual";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.replicate,
            self.z_final,
            self.saturated,
            self.survived,
            self.weight,
            self.log_pi,
            self.r,
            self.rdual
        )
    }
}

/// Runs one population through the pairs produced by `next_pair`.
fn run_population<R: rand::Rng>(
    replicate: u64,
    n: usize,
    trace: bool,
    rng: &mut R,
    mut next_pair: impl FnMut(usize, &mut R) -> crate::affine::EnvPair,
) -> (ReplicateRecord, PathState) {
    let mut z = 1u64;
    let mut saturated = false;
    let mut state = PathState::initial();
    let mut z_trace = trace.then(|| vec![1u64]);
    let mut pi_trace = trace.then(|| vec![0.0]);
    for k in 0..n {
        let pair = next_pair(k, rng);
        state = state.step(&pair);
        let g = step_generation(z, &pair, rng);
        z = g.z;
        saturated |= g.saturated;
        if let Some(t) = z_trace.as_mut() {
            t.push(z);
        }
        if let Some(t) = pi_trace.as_mut() {
            t.push(state.log_pi());
        }
    }
    let record = ReplicateRecord {
        replicate,
        z_final: z,
        saturated,
        survived: z > 0,
        weight: 1.0,
        log_pi: state.log_pi(),
        r: state.r(),
        rdual: state.rdual(),
        z_trace,
        log_pi_trace: pi_trace,
    };
    (record, state)
}

/// Population purpose tag shared by quenched and annealed runs, so that a
/// constant environment gives identical records either way.
const POPULATION: &str = "population";

/// `reps` independent copies of `Z_0 = 1, ..., Z_n` along the first `n`
/// pairs of `path`.
pub fn simulate_quenched(path: &EnvPath, n: usize, reps: u64, opts: &SimOptions) -> Result<Vec<ReplicateRecord>> {
    if n > path.len() {
        return Err(Error::IndexOutOfRange {
            index: n,
            limit: path.len(),
        });
    }
    let pairs = path.pairs();
    Ok(run_replicates(reps, opts.workers, |rep| {
        let mut rng = rng::stream(opts.seed, POPULATION, rep);
        run_population(rep, n, opts.trace, &mut rng, |k, _| pairs[k]).0
    }))
}

/// As [`simulate_quenched`] but with a fresh environment per replicate.
pub fn simulate_annealed(env: &EnvSpec, n: usize, reps: u64, opts: &SimOptions) -> Result<Vec<ReplicateRecord>> {
    Ok(run_replicates(reps, opts.workers, |rep| {
        let mut rng = rng::stream(opts.seed, POPULATION, rep);
        run_population(rep, n, opts.trace, &mut rng, |_, r| env.sample_pair(r)).0
    }))
}

/// Annealed simulation with the environment drawn from the tilted law
/// (single-step density `(1/A) e^{-kappa}`). Each record carries the
/// likelihood ratio `e^{kappa n} Pi_n` back to the original measure.
pub fn simulate_tilted(env: &EnvSpec, n: usize, reps: u64, opts: &SimOptions) -> Result<Vec<ReplicateRecord>> {
    let kappa = env.kappa()?;
    let tilted = env.tilt()?;
    Ok(run_replicates(reps, opts.workers, |rep| {
        let mut rng = rng::stream(opts.seed, "tilted-population", rep);
        let (mut rec, state) =
            run_population(rep, n, opts.trace, &mut rng, |_, r| tilted.sample_pair(r));
        rec.weight = (kappa * n as f64 + state.log_pi()).exp();
        rec
    }))
}

pub fn write_jsonl<W: Write>(records: &[ReplicateRecord], mut w: W) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(records: &[ReplicateRecord], mut w: W) -> Result<()> {
    writeln!(w, "{}", ReplicateRecord::CSV_HEADER)?;
    for rec in records {
        writeln!(w, "{}", rec.csv_row())?;
    }
    Ok(())
}

/// Weighted survival frequency and its standard error.
pub fn survival_frequency(records: &[ReplicateRecord]) -> (f64, f64) {
    let xs: Vec<f64> = records
        .iter()
        .map(|r| if r.survived { r.weight } else { 0.0 })
        .collect();
    crate::numeric::mean_and_stderr(&xs)
}
