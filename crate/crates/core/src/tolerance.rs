//! Numerical tolerances and Monte Carlo budgets used throughout the crate.

use serde::{Deserialize, Serialize};

/// Every threshold lives here so that callers (the CLI in particular) can
/// override them in one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Slack on the standing assumption `a + b >= 1`.
    pub unit_mass_slack: f64,
    /// Table weights must sum to one within this.
    pub weight_sum: f64,
    /// `|B - x(1 - A)| <= line_fit * (1 + |x|)` for a degenerate line.
    pub line_fit: f64,
    /// Relative band around zero for exactly computed drifts and derivatives.
    pub exact_zero: f64,
    /// Monte Carlo moment estimates above this are declared divergent.
    pub moment_cap: f64,
    /// Goldie-Maller integral estimates above this are treated as infinite.
    pub integral_cap: f64,
    /// Draws for Monte Carlo estimates of the Goldie-Maller integrals.
    pub integral_draws: usize,
    /// Relative standard error above which Monte Carlo evidence is inconclusive.
    pub max_rel_stderr: f64,
    /// Exact pmfs are truncated once the remaining tail mass drops below this.
    pub pmf_tail: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        unit_mass_slack: 1e-12,
        weight_sum: 1e-12,
        line_fit: 1e-9,
        exact_zero: 1e-12,
        moment_cap: 1e9,
        integral_cap: 1e6,
        integral_draws: 100_000,
        max_rel_stderr: 0.25,
        pmf_tail: 1e-12,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}
