//! Global minimizer of the interval-truncated functional.
//!
//! Given two ordered solutions `u1 <= u2` (minimal solutions at nearby
//! couplings), the truncated functional pins the source to `u1^q` below the
//! interval and `u2^q` above it, which makes the functional coercive with a
//! global minimum trapped inside `[u1, u2]`. Inside the interval the
//! truncation is inactive, so the minimizer solves the original problem.

use crate::energy::{self, EnergyVariant};
use crate::mesh::Field;
use crate::solvers::newton::minimize_energy;
use crate::solvers::{SolverError, SolverParams};

/// Slack allowed on the exit ordering check; larger escapes indicate a grid
/// too coarse to hold the ordered-interval trapping and are a hard error.
const ORDER_SLACK: f64 = 1e-10;

pub fn minimize_truncated(
    lambda: f64,
    u1: &Field,
    u2: &Field,
    params: &SolverParams,
) -> Result<Field, SolverError> {
    params.validate()?;
    // Constructor validates 0 < u1 <= u2 at every interior node.
    let variant = EnergyVariant::interval_truncated(lambda, u1.clone(), u2.clone())?;
    let init = u1.lerp(u2, 0.5);
    let utilde = minimize_energy(&variant, &init, params)?;

    let grid = u1.grid();
    for &idx in grid.interior_nodes() {
        let v = utilde.get(idx);
        let (lo, hi) = (u1.get(idx), u2.get(idx));
        if v < lo - ORDER_SLACK || v > hi + ORDER_SLACK {
            return Err(SolverError::OrderingViolation { node: idx, value: v, lower: lo, upper: hi });
        }
    }
    // Trapped inside the interval the truncation is inactive, so the
    // minimizer must solve the untruncated problem as well.
    let fres = energy::residual(&utilde, &EnergyVariant::plain(lambda))?.sup_norm();
    let bound = 10.0 * params.newton_tol;
    if fres > bound {
        return Err(SolverError::PostconditionFailed {
            what: "truncated minimizer does not solve the untruncated problem",
            measured: fres,
            bound,
        });
    }
    Ok(utilde)
}
