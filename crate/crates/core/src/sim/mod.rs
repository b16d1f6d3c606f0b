//! Monte Carlo simulation of the branching process and its diagnostics.

pub mod batch;
pub mod checks;
pub mod stats;
pub mod step;

pub use batch::{
    collect_until, run_replicates, simulate_annealed, simulate_quenched, simulate_tilted, survival_frequency,
    write_csv, write_jsonl, ReplicateRecord, SimOptions, RECORD_SCHEMA,
};
pub use stats::{
    ks_continuous, ks_discrete, ks_two_sample, kolmogorov_p_value, tv_distance, EmpiricalLaw, KsResult, Law,
    TvReport,
};
pub use step::{step_generation, sum_of_geometrics, Generation, POPULATION_CAP};
pub use checks::{
    branchless_table, eve_check, kozlov_scan, martingale_check, reduced_simulate, survival_importance,
    yaglom_quenched_check, BranchlessRow, EveReport, KozlovRow, KozlovScan, MartingaleReport, SurvivalEstimate,
    YaglomReport,
};
