use lfgw_core::quenched::EnvPath;
use lfgw_core::sim::{
    self, survival_frequency, tv_distance, EmpiricalLaw, Law, ReplicateRecord, SimOptions,
};
use lfgw_core::{
    classify_with, critical_diagnostics, decomposition_laws, eve_of_extinction, eve_of_extinction_with_limit,
    extinction_limit, reduced_law, reduced_law_reversed, rng, snapshot, EnvPair, EnvSpec, EnvVariant, Error,
    Tolerances,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{Command, Common, QuenchedArgs, SimulateArgs};
use crate::input::{parse_env, read_path};

pub const SEED_VAR: &str = "LFGW_DEFAULT_SEED";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn from_rows<T: Serialize>(header: Vec<&'static str>, items: &[T]) -> Result<Self> {
        let mut rows = Vec::with_capacity(items.len());
        for item in items {
            let v = serde_json::to_value(item)?;
            rows.push(header.iter().map(|h| v.get(*h).cloned().unwrap_or(Value::Null)).collect());
        }
        Ok(Self { header, rows })
    }
}

/// Everything a command produces.
pub struct Report {
    pub headline: Vec<String>,
    pub summary: Value,
    pub table: Option<Table>,
    pub records: Option<Vec<ReplicateRecord>>,
}

impl Report {
    fn new(headline: Vec<String>, summary: Value) -> Self {
        Self {
            headline,
            summary,
            table: None,
            records: None,
        }
    }
}

/// Rounds to twelve significant digits for display.
fn num(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn env_of(c: &Common) -> Result<EnvSpec> {
    match &c.env {
        Some(s) => Ok(parse_env(s)?),
        None => usage("--env is required"),
    }
}

fn need<T: Copy>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

struct Seed {
    value: u64,
    source: &'static str,
}

fn seed_of(c: &Common, required: bool) -> Result<Seed> {
    if let Some(value) = c.seed {
        return Ok(Seed { value, source: "flag" });
    }
    if let Ok(text) = std::env::var(SEED_VAR) {
        return match text.trim().parse() {
            Ok(value) => Ok(Seed { value, source: "environment" }),
            Err(_) => usage(format!("{SEED_VAR} must be an unsigned integer, got {text:?}")),
        };
    }
    if required {
        usage(format!("--seed (or {SEED_VAR}) is required for this command"))
    } else {
        Ok(Seed { value: 0, source: "unused" })
    }
}

fn constant_pair(env: &EnvSpec) -> Option<EnvPair> {
    match env.variant {
        EnvVariant::ConstantPair { a, b } => EnvPair::new(a, b).ok(),
        _ => None,
    }
}

/// The path given by `--path`, or one of length `len` built from `--env`.
fn path_of(c: &Common, env: Option<&EnvSpec>, len: usize) -> Result<(EnvPath, Seed)> {
    if let Some(file) = &c.path {
        return Ok((read_path(file)?, seed_of(c, false)?));
    }
    let Some(env) = env else {
        return usage("one of --path or --env is required");
    };
    if let Some(pair) = constant_pair(env) {
        return Ok((EnvPath::constant(pair, len), seed_of(c, false)?));
    }
    let seed = seed_of(c, true)?;
    let path = EnvPath::sample(env, len, &mut rng::stream(seed.value, "cli-path", 0));
    Ok((path, seed))
}

fn opt_env(c: &Common) -> Result<Option<EnvSpec>> {
    c.env.as_deref().map(parse_env).transpose().map_err(Into::into)
}

fn stochastic_seed(c: &Common, env: &EnvSpec) -> Result<Seed> {
    seed_of(c, constant_pair(env).is_none())
}

fn meta(command: &str, seed: &Seed) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed.value,
        "seed_source": seed.source,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

pub fn run(command: &Command) -> Result<Report> {
    match command {
        Command::Classify(c) => classify(c),
        Command::Quenched(q) => quenched(q),
        Command::Simulate(s) => simulate(s),
        Command::Yaglom(c) => yaglom(c),
        Command::Survival(c) => survival(c),
        Command::Martingale(c) => martingale(c),
        Command::Decompose(c) => decompose(c),
        Command::Kozlov(c) => kozlov(c),
    }
}

fn classify(c: &Common) -> Result<Report> {
    let env = env_of(c)?;
    let seed = seed_of(c, false)?;
    let t = classify_with(&env, &Tolerances::DEFAULT, seed.value)?;
    let summary = merge(meta("classify", &seed), json!({ "trichotomy": t }));
    Ok(Report::new(vec![format!("{} {}", t.sub_case, t.criticality)], summary))
}

fn quenched(q: &QuenchedArgs) -> Result<Report> {
    let c = &q.common;
    let env = opt_env(c)?;
    let n = match (c.n, c.n_grid.is_empty()) {
        (Some(n), _) => Some(n),
        (None, false) => None,
        (None, true) => return usage("--n or --n-grid is required"),
    };
    let len = [
        n.unwrap_or(0) + q.l.unwrap_or(0),
        q.m.unwrap_or(0),
        c.n_grid.iter().copied().max().unwrap_or(0),
    ]
    .into_iter()
    .max()
    .unwrap_or(0);
    let (path, seed) = path_of(c, env.as_ref(), len)?;
    let mut headline = Vec::new();
    let mut summary = meta("quenched", &seed);

    if let Some(n) = n {
        let snap = snapshot(&path, n)?;
        headline.push(format!(
            "n = {n}: LF({}, {}), q_n = {}, P(Z_n > 0) = {}",
            num(snap.law_zn.a()),
            num(snap.law_zn.b()),
            num(snap.q_n),
            num(snap.survival)
        ));
        summary = merge(summary, json!({ "snapshot": snap }));

        if q.reduced {
            let m = need(q.m, "--m")?;
            let fw = reduced_law(&path, m, n)?;
            let rev = reduced_law_reversed(&path, m, n)?;
            headline.push(format!(
                "reduced m = {m}: Geom+({}) forward, Geom+({}) reversed",
                num(fw.p()),
                num(rev.p())
            ));
            summary = merge(summary, json!({ "reduced": { "m": m, "forward": fw.p(), "reversed": rev.p() } }));
        }
        if let Some(l) = q.l {
            let eve = match &env {
                Some(env) => {
                    let mut tail = rng::stream(seed.value, "cli-tail", 0);
                    eve_of_extinction_with_limit(&path, n, l, env, c.eps, c.n_max, &mut tail)
                        .or_else(|_| eve_of_extinction(&path, n, l))?
                }
                None => eve_of_extinction(&path, n, l)?,
            };
            headline.push(format!(
                "eve l = {l}: Geom+({}) forward, Geom+({}) reversed",
                num(eve.param_fw),
                num(eve.param_rev)
            ));
            summary = merge(summary, json!({ "eve_of_extinction": eve }));
        }
    }
    let mut table = None;
    if !c.n_grid.is_empty() {
        let diag = critical_diagnostics(&path, &c.n_grid)?;
        summary = merge(summary, json!({ "critical": diag }));
        table = Some(Table::from_rows(vec!["n", "m_n", "r_times_survival", "cond_param"], &diag)?);
    }
    Ok(Report {
        headline,
        summary,
        table,
        records: None,
    })
}

fn simulate(s: &SimulateArgs) -> Result<Report> {
    let c = &s.common;
    let n = need(c.n, "--n")?;
    let reps = need(c.reps, "--reps")?;
    let env = opt_env(c)?;
    let (records, exact, seed) = if let Some(file) = &c.path {
        let path = read_path(file)?;
        let seed = seed_of(c, true)?;
        let opts = SimOptions::new(seed.value).workers(c.workers).trace(s.trace);
        let recs = sim::simulate_quenched(&path, n, reps, &opts)?;
        (recs, Some(snapshot(&path, n)?), seed)
    } else {
        let env = match env {
            Some(e) => e,
            None => return usage("one of --path or --env is required"),
        };
        let seed = seed_of(c, true)?;
        let opts = SimOptions::new(seed.value).workers(c.workers).trace(s.trace);
        (sim::simulate_annealed(&env, n, reps, &opts)?, None, seed)
    };
    let (survival, stderr) = survival_frequency(&records);
    let saturated = records.iter().filter(|r| r.saturated).count();
    let emp = EmpiricalLaw::from_samples(records.iter().filter(|r| !r.saturated).map(|r| r.z_final), c.tail_cap);
    let mut summary = merge(
        meta("simulate", &seed),
        json!({
            "mode": if exact.is_some() { "quenched" } else { "annealed" },
            "record_schema": sim::RECORD_SCHEMA,
            "n": n,
            "reps": reps,
            "survival": survival,
            "survival_stderr": stderr,
            "saturated": saturated,
            "tail_cap": c.tail_cap,
            "tail_mass": emp.tail_mass(),
        }),
    );
    let mut headline = vec![format!(
        "{reps} replicates, P(Z_{n} > 0) ~ {} +- {}",
        num(survival),
        num(stderr)
    )];
    if let Some(snap) = exact {
        let pmf = |k| snap.law_zn.pmf(k);
        let tv = tv_distance(Law::Empirical(&emp), Law::Pmf(&pmf), Tolerances::DEFAULT.pmf_tail);
        headline.push(format!("exact P(Z_{n} > 0) = {}, TV distance {}", num(snap.survival), num(tv.distance)));
        summary = merge(summary, json!({ "exact_survival": snap.survival, "tv": tv }));
    }
    Ok(Report {
        headline,
        summary,
        table: None,
        records: Some(records),
    })
}

fn yaglom(c: &Common) -> Result<Report> {
    let env = env_of(c)?;
    let n = need(c.n, "--n")?;
    let reps = need(c.reps, "--reps")?;
    let seed = seed_of(c, true)?;
    let rep = sim::yaglom_quenched_check(&env, n, reps as usize, &SimOptions::new(seed.value).workers(c.workers))?;
    let headline = vec![format!(
        "n = {n}: Geom+({}) along the reversed path, limit {}, KS p = {} over {} survivors",
        num(rep.param),
        rep.limit_param.map(num).unwrap_or_else(|| "unavailable".into()),
        num(rep.ks.p_value),
        rep.survivors
    )];
    let rows: Vec<Value> = rep
        .param_sequence
        .iter()
        .enumerate()
        .map(|(k, p)| json!({ "k": k + 1, "param": p }))
        .collect();
    let table = Table::from_rows(vec!["k", "param"], &rows)?;
    Ok(Report {
        headline,
        summary: merge(meta("yaglom", &seed), json!({ "report": rep })),
        table: Some(table),
        records: None,
    })
}

fn survival(c: &Common) -> Result<Report> {
    let env = env_of(c)?;
    let n = need(c.n, "--n")?;
    let reps = c.reps.unwrap_or(10_000);
    let seed = stochastic_seed(c, &env)?;
    let est = sim::survival_importance(&env, n, reps, &SimOptions::new(seed.value).workers(c.workers))?;
    Ok(Report::new(
        vec![format!("p_hat = {}, stderr = {}", num(est.p_hat), num(est.stderr))],
        merge(meta("survival", &seed), json!({ "estimate": est })),
    ))
}

fn martingale(c: &Common) -> Result<Report> {
    let env = env_of(c)?;
    let n = need(c.n, "--n")?;
    let reps = need(c.reps, "--reps")?;
    let (path, _) = path_of(c, Some(&env), n)?;
    let seed = seed_of(c, true)?;
    let rep = sim::martingale_check(&path, &env, n, reps, &SimOptions::new(seed.value).workers(c.workers))?;
    let headline = vec![
        format!("mean W_n = {} +- {}", num(rep.mean_w), num(rep.mean_w_stderr)),
        format!(
            "zero mass {} vs {} (z = {}), KS of positive part vs Exp({}) = {}",
            num(rep.zero_frequency),
            num(rep.limit_w0),
            num(rep.zero_z_score),
            num(rep.limit_rate),
            num(rep.ks_positive.statistic)
        ),
    ];
    Ok(Report::new(headline, merge(meta("martingale", &seed), json!({ "report": rep }))))
}

fn decompose(c: &Common) -> Result<Report> {
    let env = env_of(c)?;
    let n = need(c.n, "--n")?;
    let (path, seed) = path_of(c, Some(&env), n)?;
    let mut tail = rng::stream(seed.value, "cli-tail", 0);
    let limit = extinction_limit(&path, &env, c.eps, c.n_max, &mut tail)?;
    let dec = decomposition_laws(&path, n, limit.r_inf.value)?;
    let lf = dec.finite_line.to_lf()?;
    let headline = vec![
        format!("finite line LF({}, {}), infinite line Geom+({})", num(lf.a()), num(lf.b()), num(dec.infinite_line.p())),
        format!("q(e) = {}", num(limit.q_e)),
    ];
    Ok(Report::new(
        headline,
        merge(meta("decompose", &seed), json!({ "extinction": limit, "decomposition": dec })),
    ))
}

fn kozlov(c: &Common) -> Result<Report> {
    let env = env_of(c)?;
    if c.n_grid.is_empty() && c.n.is_none() {
        return usage("--n-grid is required");
    }
    let grid: Vec<usize> = if c.n_grid.is_empty() { vec![c.n.unwrap_or(0)] } else { c.n_grid.clone() };
    let reps = need(c.reps, "--reps")?;
    let seed = stochastic_seed(c, &env)?;
    let scan = sim::kozlov_scan(&env, &grid, reps, &SimOptions::new(seed.value).workers(c.workers))?;
    let mut headline: Vec<String> = scan
        .rows
        .iter()
        .map(|r| format!("n = {}: sqrt(n) P(Z_n > 0) = {} +- {}", r.n, num(r.scaled), num(r.scaled_stderr)))
        .collect();
    headline.extend(scan.notes.iter().cloned());
    let table = Table::from_rows(vec!["n", "p_hat", "stderr", "scaled", "scaled_stderr"], &scan.rows)?;
    Ok(Report {
        headline,
        summary: merge(meta("kozlov", &seed), json!({ "scan": scan })),
        table: Some(table),
        records: None,
    })
}
