//! Centralized numeric tolerances.
//!
//! Every magic tolerance in the crate lives in this one record so that tests,
//! the library, and reports all agree on what "equal" means.

use serde::{Deserialize, Serialize};

/// Numeric tolerances used across validation, linear programming, and the
/// solver's internal checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericConfig {
    /// Probability rows (transition rows, initial distribution, policy rows)
    /// must sum to 1 within this.
    pub stochastic_row: f64,
    /// Flow-conservation residual bound in l1 for exact occupancy solves.
    pub flow: f64,
    /// Occupancy total-mass bound: |sum(nu) - 1/(1-gamma)| <= mass.
    pub mass: f64,
    /// Simplex primal feasibility tolerance.
    pub lp_feasibility: f64,
    /// Simplex optimality / duality-gap / complementary-slackness tolerance.
    pub lp_optimality: f64,
    /// Stationary-distribution residual bound: ||mu P - mu||_1.
    pub stationary: f64,
    /// KKT residual bound for the x-subproblem solution.
    pub kkt: f64,
    /// Function-value tolerance for the 1-D bisection root finds.
    pub bisection: f64,
    /// Rows with total occupancy below this are treated as zero mass.
    pub zero_row: f64,
    /// Slack allowed when asserting feasible-set membership of solver iterates.
    pub feasibility_slack: f64,
}

impl NumericConfig {
    pub const DEFAULT: NumericConfig = NumericConfig {
        stochastic_row: 1e-12,
        flow: 1e-9,
        mass: 1e-9,
        lp_feasibility: 1e-9,
        lp_optimality: 1e-8,
        stationary: 1e-10,
        kkt: 1e-8,
        bisection: 1e-12,
        zero_row: 1e-15,
        feasibility_slack: 1e-9,
    };
}

impl Default for NumericConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}
