//! Linear-fractional Galton-Watson processes in i.i.d. random environment.
//!
//! The offspring law in generation `n` is `LF(A_n, B_n)` for an i.i.d.
//! environment `(A_n, B_n)`. Every quenched law is again linear fractional
//! and is a closed-form function of `Pi_n = A_1...A_n`, the perpetuity
//! partial sum `R_n` and its dual `R_n^(-1)`. The [`sim`] module checks those
//! formulas by Monte Carlo.

pub mod affine;
pub mod env;
pub mod error;
pub mod lf;
pub mod numeric;
pub mod quenched;
pub mod rng;
pub mod sim;
pub mod tolerance;

pub use affine::{
    classify, classify_with, dual_path, dual_perpetuity_tail, gm_integral, gm_integral_with,
    perpetuity_tail, BoundKind, Criticality, EnvPair, Evidence, GmIntegral, GmSide, Label,
    PathState, PerpetuityEstimate, SubCase, Trichotomy,
};
pub use env::{
    AAtom, Atom, BRule, EnvSpec, EnvVariant, LineSign, SubcriticalRegime, SubregimeLabel,
};
pub use error::{Error, Result};
pub use lf::{GeomPlus, LfMixture, LfMoments, LinearFractional};
pub use tolerance::Tolerances;
pub use quenched::{
    critical_diagnostics, decomposition_laws, eve_of_extinction, eve_of_extinction_with_limit,
    extinction_limit, martingale_limit_law, reduced_law, reduced_law_reversed,
    reduced_offspring_law, snapshot, CriticalRecord, Decomposition, EnvPath, EveOfExtinction,
    ExtinctionLimit, MartingaleLimit, QuenchedSnapshot,
};
