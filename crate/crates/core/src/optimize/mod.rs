//! Numerical engines: a damped Newton root-finder for exactly identified
//! moment equations, simulated annealing for the GMM criterion, and a
//! Gauss–Newton polish for quadratic forms in smooth moments.

mod anneal;
mod newton;
mod polish;

use serde::{Deserialize, Serialize};

pub use anneal::{simulated_annealing, AnnealSchedule};
pub use newton::{newton_root, NewtonOptions};
pub use polish::{gauss_newton_polish, PolishOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    SingularJacobian,
    /// Simulated annealing exhausted its evaluation budget.
    BudgetExhausted,
    /// No exact root was found; the point minimises the residual norm.
    Inexact,
}

/// Diagnostics shared by all solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub converged: bool,
    pub status: SolverStatus,
    pub iterations: usize,
    pub evaluations: usize,
    /// `‖M̂_n‖` for root-finding, the criterion value for minimisation.
    pub final_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<f64>>,
}

impl SolverReport {
    pub(crate) fn new(status: SolverStatus, iterations: usize, evaluations: usize, final_norm: f64) -> Self {
        Self {
            converged: matches!(status, SolverStatus::Converged | SolverStatus::BudgetExhausted),
            status,
            iterations,
            evaluations,
            final_norm,
            path: None,
        }
    }
}
