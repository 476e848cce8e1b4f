//! Iterative algorithms: the auxiliary linear-load problem, sub/supersolution
//! constructions, the monotone iteration for minimal solutions, the
//! ordered-interval minimizer, the numerical mountain pass, and the
//! semi-implicit heat stepper used by the blow-up demonstrator.

mod auxiliary;
mod constructions;
mod monotone;
mod mountain;
mod newton;
mod parabolic;
mod truncated;

pub use auxiliary::{solve_auxiliary, solve_auxiliary_from};
pub use constructions::{
    build_subsolution, build_supersolution_small_lambda, solve_plaplacian_sublinear, Subsolution,
    Supersolution,
};
pub use monotone::{monotone_iteration, IterationOutcome, IterationStatus};
pub use mountain::{build_peak, mountain_pass, MpOutcome, MpParams, MpStatus};
pub use newton::minimize_energy;
pub use parabolic::{kaplan_ode_bound, parabolic_blowup, BlowupReport};
pub use truncated::minimize_truncated;

use crate::energy::EnergyError;
use crate::linalg::LinalgError;
use crate::mesh::{Field, MeshError};
use thiserror::Error;

/// Shared iteration controls. Field-by-field defaults match the documented
/// contract; `validate` rejects nonsensical combinations early.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolverParams {
    /// Residual sup-norm target of Newton phases.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Backtracking factor of the line search.
    pub ls_backtrack: f64,
    /// Sufficient-decrease (Armijo) constant.
    pub ls_c1: f64,
    /// Degenerate-edge regularization ε of the Jacobians.
    pub reg_eps: f64,
    /// Sup-norm increment threshold of the monotone iteration.
    pub monotone_tol: f64,
    pub monotone_max_iter: usize,
    /// Sup-norm divergence cap of the monotone iteration.
    pub m_cap: f64,
}

impl Default for SolverParams {
    fn default() -> SolverParams {
        SolverParams {
            newton_tol: 1e-10,
            newton_max_iter: 200,
            ls_backtrack: 0.5,
            ls_c1: 1e-4,
            reg_eps: 1e-8,
            monotone_tol: 1e-9,
            monotone_max_iter: 500,
            m_cap: 1e6,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let ok = self.newton_tol > 0.0
            && self.monotone_tol > 0.0
            && self.reg_eps >= 0.0
            && self.ls_backtrack > 0.0
            && self.ls_backtrack < 1.0
            && self.ls_c1 > 0.0
            && self.ls_c1 < 0.5
            && self.newton_max_iter > 0
            && self.monotone_max_iter > 0
            && self.m_cap > self.monotone_tol;
        if ok {
            Ok(())
        } else {
            Err(SolverError::BadParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver parameters: {0}")]
    BadParams(String),
    #[error("{what} did not converge in {iterations} iterations (residual sup {residual_sup:.3e})")]
    MaxIter {
        what: &'static str,
        iterations: usize,
        residual_sup: f64,
        /// Last iterate, for post-mortems.
        last: Box<Field>,
    },
    #[error("{what}: line search failed at iteration {iteration} (residual sup {residual_sup:.3e})")]
    LineSearch {
        what: &'static str,
        iteration: usize,
        residual_sup: f64,
        last: Box<Field>,
    },
    #[error("ordered-interval violation at node {node}: value {value} outside [{lower}, {upper}]")]
    OrderingViolation { node: usize, value: f64, lower: f64, upper: f64 },
    #[error("{what}: measured {measured:.3e} exceeds contract bound {bound:.3e}")]
    PostconditionFailed { what: &'static str, measured: f64, bound: f64 },
    #[error("iterate became non-finite at {what} iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },
    #[error("inner solve failed at outer iteration {iteration}: {source}")]
    Inner {
        iteration: usize,
        #[source]
        source: Box<SolverError>,
    },
    #[error(transparent)]
    Linear(#[from] LinalgError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}
