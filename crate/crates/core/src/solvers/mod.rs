//! Dense QP and SQP solvers with an independent KKT checker.

pub mod kkt;
pub mod nlp;
pub mod qp;

use std::fmt;
use std::time::Instant;

pub use kkt::{nlp_kkt_residuals, qp_kkt_residuals, KktResiduals, NlpMultipliers, QpMultipliers};
pub use nlp::{solve_nlp, NlpOptions, NlpProblem, NlpSolution};
pub use qp::{solve_qp, QpProblem, QpSolution, DEFAULT_QP_TOL};

pub const DEFAULT_NLP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
    /// Terminated normally but the independent KKT check missed the tolerance.
    Inaccurate,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Inaccurate => "inaccurate",
        };
        f.write_str(s)
    }
}

/// Identifies a constraint row of the original problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConstraintRef {
    Equality(usize),
    Inequality(usize),
    Bound(usize),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub solve_time_ms: f64,
    /// Diagonal shift added to the Hessian, if any.
    pub regularization: Option<f64>,
    pub violated: Option<ConstraintRef>,
}

impl SolveReport {
    fn base(status: SolveStatus, iterations: usize, start: Instant) -> Self {
        Self {
            status,
            iterations,
            primal_residual: 0.0,
            dual_residual: 0.0,
            stationarity: 0.0,
            complementarity: 0.0,
            solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
            regularization: None,
            violated: None,
        }
    }

    pub(crate) fn infeasible(
        iterations: usize,
        start: Instant,
        violated: Option<ConstraintRef>,
    ) -> Self {
        Self {
            violated,
            ..Self::base(SolveStatus::Infeasible, iterations, start)
        }
    }

    /// Report for a result that needed no iterations.
    pub(crate) fn immediate(status: SolveStatus) -> Self {
        Self::base(status, 0, Instant::now())
    }

    pub(crate) fn max_iter(iterations: usize, start: Instant) -> Self {
        Self::base(SolveStatus::MaxIter, iterations, start)
    }

    pub(crate) fn from_residuals(
        status: SolveStatus,
        iterations: usize,
        start: Instant,
        r: &KktResiduals,
    ) -> Self {
        Self {
            primal_residual: r.primal,
            dual_residual: r.dual,
            stationarity: r.stationarity,
            complementarity: r.complementarity,
            ..Self::base(status, iterations, start)
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn max_residual(&self) -> f64 {
        self.primal_residual
            .max(self.dual_residual)
            .max(self.stationarity)
            .max(self.complementarity)
    }
}
