use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Linear-fractional branching processes in random environment.
#[derive(Debug, Parser)]
#[command(name = "lfgw", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify an environment as supercritical, subcritical or critical.
    Classify(Common),
    /// Exact quenched laws along an environment path.
    Quenched(QuenchedArgs),
    /// Simulate populations along a path (quenched) or a random environment (annealed).
    Simulate(SimulateArgs),
    /// Compare survivors along a reversed path with the exact conditional law.
    Yaglom(Common),
    /// Annealed survival probability by importance sampling.
    Survival(Common),
    /// Compare the normalized population with its limit mixture.
    Martingale(Common),
    /// Finite-line and infinite-line offspring laws of a supercritical process.
    Decompose(Common),
    /// Scaled annealed survival of a critical environment over a grid of n.
    Kozlov(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Environment: `const:A,B`, `table:@atoms.json`, `@spec.json` or inline JSON.
    #[arg(long)]
    pub env: Option<String>,
    /// Environment path as JSONL, one `{"a":..,"b":..}` per line.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Generation.
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated generations, e.g. `16,32,64`.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Vec<usize>,
    /// Replicates (surviving replicates for `yaglom`).
    #[arg(long)]
    pub reps: Option<u64>,
    /// Seed; falls back to LFGW_DEFAULT_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the full output here (atomically).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: Format,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Target accuracy of perpetuity tails.
    #[arg(long, default_value_t = 1e-12)]
    pub eps: f64,
    /// Step budget of perpetuity tails.
    #[arg(long, default_value_t = 1_000_000)]
    pub n_max: usize,
    /// Largest count kept separately in empirical laws; larger ones are lumped.
    #[arg(long, default_value_t = 1000)]
    pub tail_cap: u64,
}

#[derive(Debug, Args)]
pub struct QuenchedArgs {
    #[command(flatten)]
    pub common: Common,
    /// Also report the reduced-process laws at generation `--m`.
    #[arg(long, requires = "m")]
    pub reduced: bool,
    #[arg(long)]
    pub m: Option<usize>,
    /// Also report the eve-of-extinction parameters `l` generations ahead.
    #[arg(long)]
    pub l: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Keep per-generation traces in JSONL records.
    #[arg(long)]
    pub trace: bool,
}
