//! Monotone iteration toward the minimal nonnegative solution.
//!
//! Each sweep solves the auxiliary problem with the frozen load `λ w^q`.
//! Because the auxiliary solve is order-preserving and the canonical starting
//! point is a subsolution, the iterates increase pointwise; they either
//! settle under a supersolution (convergence to the minimal solution, then a
//! Newton polish of the genuine residual) or climb past every bound
//! (divergence, the numerical witness that no solution exists at this
//! coupling).

use crate::energy::{self, EnergyVariant};
use crate::mesh::{Field, Grid};
use crate::solvers::auxiliary::solve_auxiliary_from;
use crate::solvers::constructions::build_subsolution;
use crate::solvers::newton::polish;
use crate::solvers::{SolverError, SolverParams};
use std::sync::Arc;

/// How a monotone sweep ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum IterationStatus {
    /// Increments fell below the sweep tolerance and the polished residual
    /// meets the Newton tolerance.
    Converged,
    /// Sup norms exceeded the divergence cap while growing geometrically
    /// (factor at least 1.05 over the last five sweeps), or became non-finite.
    Diverged,
    /// Sweep budget exhausted without either certificate.
    Stalled,
}

impl IterationStatus {
    /// Stable lowercase token used in CSV cells and log lines.
    pub fn token(self) -> &'static str {
        match self {
            IterationStatus::Converged => "converged",
            IterationStatus::Diverged => "diverged",
            IterationStatus::Stalled => "stalled",
        }
    }
}

impl std::fmt::Display for IterationStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Full record of a monotone run.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub status: IterationStatus,
    /// Polished solution; present only when converged.
    pub solution: Option<Field>,
    /// Sup norm of every iterate, starting with the initial field.
    pub iterates_sup_norms: Vec<f64>,
    /// Energy of every iterate under the plain functional.
    pub energy_trace: Vec<f64>,
    /// Number of sweeps performed.
    pub iterations: usize,
    /// Sup norm of the plain residual at the returned solution.
    pub final_residual_sup: Option<f64>,
}

const GROWTH_FACTOR: f64 = 1.05;
const GROWTH_WINDOW: usize = 5;
/// Sup norm beyond which a run is declared divergent outright (protects the
/// energy evaluation from overflow; geometric growth from any practical cap
/// reaches this long after the windowed test has fired).
const HARD_CAP: f64 = 1e100;

/// Runs the monotone iteration at coupling `lambda`. With `start = None` the
/// canonical subsolution seeds the run (requires `lambda > 0`); any explicit
/// start field is used as given.
pub fn monotone_iteration(
    grid: &Arc<Grid>,
    lambda: f64,
    start: Option<&Field>,
    params: &SolverParams,
) -> Result<IterationOutcome, SolverError> {
    params.validate()?;
    assert!(lambda >= 0.0, "coupling must be nonnegative");
    let mut w = match start {
        Some(f) => {
            assert!(f.grid().same_layout(grid), "start field lives on a different grid");
            f.clone()
        }
        None => {
            assert!(lambda > 0.0, "the canonical subsolution needs a positive coupling");
            build_subsolution(grid, lambda, params)?.field
        }
    };
    let variant = EnergyVariant::plain(lambda);
    let q = grid.q();
    let mut sups = vec![w.sup_norm()];
    let mut energies = vec![energy::energy(&w, &variant)?];
    let mut iterations = 0usize;

    for iter in 1..=params.monotone_max_iter {
        // Certify divergence on the history *before* attempting the next
        // solve: past the cap the loads grow without bound and the inner
        // Newton eventually has nothing meaningful left to resolve, which
        // must not mask a certificate the iterates already established.
        if growth_certified(&sups, params.m_cap) {
            return Ok(diverged(sups, energies, iterations));
        }
        let mut load = w.clone();
        load.map_interior(|s| lambda * energy::signed_power(s, q));
        let next = solve_auxiliary_from(&load, w.clone(), params).map_err(|e| SolverError::Inner {
            iteration: iter,
            source: Box::new(e),
        })?;
        iterations = iter;
        let diff = next.max_abs_diff(&w);
        let sup = next.sup_norm();
        w = next;
        if !sup.is_finite() || sup > HARD_CAP {
            sups.push(sup);
            energies.push(f64::INFINITY);
            return Ok(diverged(sups, energies, iterations));
        }
        sups.push(sup);
        energies.push(energy::energy(&w, &variant)?);

        if diff <= params.monotone_tol {
            return finish_converged(w, lambda, params, sups, energies, iterations);
        }
    }
    if growth_certified(&sups, params.m_cap) {
        return Ok(diverged(sups, energies, iterations));
    }

    Ok(IterationOutcome {
        status: IterationStatus::Stalled,
        solution: None,
        iterates_sup_norms: sups,
        energy_trace: energies,
        iterations,
        final_residual_sup: None,
    })
}

/// The windowed divergence certificate: the latest sup norm exceeds the cap
/// and the last [`GROWTH_WINDOW`] sweeps each grew by [`GROWTH_FACTOR`].
fn growth_certified(sups: &[f64], m_cap: f64) -> bool {
    let k = sups.len();
    k > GROWTH_WINDOW
        && sups[k - 1] > m_cap
        && (k - GROWTH_WINDOW..k).all(|i| sups[i] >= GROWTH_FACTOR * sups[i - 1])
}

fn diverged(sups: Vec<f64>, energies: Vec<f64>, iterations: usize) -> IterationOutcome {
    IterationOutcome {
        status: IterationStatus::Diverged,
        solution: None,
        iterates_sup_norms: sups,
        energy_trace: energies,
        iterations,
        final_residual_sup: None,
    }
}

/// Newton-polish the converged sweep iterate on the genuine residual. A
/// polish that cannot reach the Newton tolerance downgrades the run to
/// `Stalled` rather than reporting an unearned convergence.
fn finish_converged(
    w: Field,
    lambda: f64,
    params: &SolverParams,
    mut sups: Vec<f64>,
    mut energies: Vec<f64>,
    iterations: usize,
) -> Result<IterationOutcome, SolverError> {
    let variant = EnergyVariant::plain(lambda);
    let eps = params.reg_eps;
    let res = |u: &Field| energy::residual(u, &variant).expect("validated");
    let variant2 = EnergyVariant::plain(lambda);
    let hess = move |u: &Field| energy::jacobian(u, &variant2, eps).expect("validated");
    let polished = match polish("monotone polish", &res, &hess, w, params.newton_tol, params) {
        Ok(pair) => Some(pair),
        Err(SolverError::MaxIter { residual_sup, last, .. }) if residual_sup <= params.newton_tol => {
            Some((*last, residual_sup))
        }
        Err(SolverError::MaxIter { .. }) => None,
        Err(e) => return Err(e),
    };
    match polished {
        Some((sol, rsup)) => {
            sups.push(sol.sup_norm());
            energies.push(energy::energy(&sol, &variant)?);
            Ok(IterationOutcome {
                status: IterationStatus::Converged,
                solution: Some(sol),
                iterates_sup_norms: sups,
                energy_trace: energies,
                iterations,
                final_residual_sup: Some(rsup),
            })
        }
        None => Ok(IterationOutcome {
            status: IterationStatus::Stalled,
            solution: None,
            iterates_sup_norms: sups,
            energy_trace: energies,
            iterations,
            final_residual_sup: None,
        }),
    }
}
