//! Damped-Newton drivers shared by every solver phase: an energy minimizer
//! with Armijo backtracking and Levenberg shift escalation, and a residual
//! root polisher for (possibly indefinite) critical points.

use crate::energy::{self, EnergyVariant};
use crate::linalg::SparseMatrix;
use crate::mesh::Field;
use crate::solvers::{SolverError, SolverParams};

pub(crate) struct Problem<'a> {
    pub label: &'static str,
    pub energy: Box<dyn Fn(&Field) -> f64 + 'a>,
    pub residual: Box<dyn Fn(&Field) -> Field + 'a>,
    pub hessian: Box<dyn Fn(&Field) -> SparseMatrix + 'a>,
    /// L1 magnitude of the terms the residual assembly sums at this iterate;
    /// times [`RESIDUAL_FLOOR_EPS`] it caps how small a residual can be asked
    /// to get before the request drops below assembly rounding noise.
    pub magnitude: Box<dyn Fn(&Field) -> f64 + 'a>,
}

/// Residuals are alternating sums of flux terms; entries smaller than this
/// multiple of the summed term magnitudes are indistinguishable from rounding
/// noise, so the convergence target is clamped from below accordingly.
pub(crate) const RESIDUAL_FLOOR_EPS: f64 = 16.0 * f64::EPSILON;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(H + sigma I) d = -g`, escalating `sigma` until the direction is
/// a descent direction for `g` (or the attempt budget runs out).
fn descent_direction(
    base: &SparseMatrix,
    g: &[f64],
    sigma_seed: f64,
) -> Option<(Vec<f64>, f64)> {
    let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
    let scale = base.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut sigma = sigma_seed;
    for _ in 0..25 {
        let mut h = base.clone();
        if sigma > 0.0 {
            h.shift_diag(sigma);
        }
        if let Ok(d) = h.solve(&neg_g) {
            let gd = dot(g, &d);
            if gd < 0.0 && d.iter().all(|v| v.is_finite()) {
                return Some((d, sigma));
            }
        }
        sigma = if sigma == 0.0 { 1e-8 * scale } else { sigma * 10.0 };
        if sigma > 1e12 * scale {
            break;
        }
    }
    None
}

/// Damped Newton descent on `problem.energy` until the residual sup-norm is
/// at most `tol`. The Hessian may be indefinite (truncated functionals);
/// indefiniteness is handled by the shift escalation, non-descent steps never
/// get accepted.
pub(crate) fn minimize(
    problem: &Problem<'_>,
    init: Field,
    tol: f64,
    params: &SolverParams,
) -> Result<Field, SolverError> {
    params.validate()?;
    let mut u = init;
    let mut sigma_seed = 0.0;
    for iter in 0..params.newton_max_iter {
        let res = (problem.residual)(&u);
        let rsup = res.sup_norm();
        if !rsup.is_finite() {
            return Err(SolverError::NonFinite { what: problem.label, iteration: iter });
        }
        let target = tol.max(RESIDUAL_FLOOR_EPS * (problem.magnitude)(&u));
        if rsup <= target {
            return Ok(u);
        }
        let g = res.interior_vec();
        let base = (problem.hessian)(&u);
        let Some((d, sigma)) = descent_direction(&base, &g, sigma_seed) else {
            return Err(SolverError::LineSearch {
                what: problem.label,
                iteration: iter,
                residual_sup: rsup,
                last: Box::new(u),
            });
        };
        // Remember a fraction of the working shift: saves re-escalation in the
        // next iteration while still letting it decay to the pure Newton step.
        sigma_seed = sigma * 0.1;
        // Step-size convergence: an unshifted Newton correction below the
        // representable resolution of the iterate means no f64 neighbor of
        // `u` is closer to the critical point; the leftover residual only
        // reflects how strongly the Hessian amplifies that last ulp.
        let step_sup = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sigma == 0.0 && step_sup <= 4.0 * f64::EPSILON * u.sup_norm() {
            return Ok(u);
        }
        let dir = Field::from_interior(u.grid(), &d);
        let e0 = (problem.energy)(&u);
        let gd = dot(&g, &d);
        let mut accepted = false;
        // The Armijo margin must be resolvable against e0 in f64, otherwise
        // the test accepts no-progress steps forever (the margin rounds away
        // inside `e0 + margin`). Below that plateau only the residual can
        // certify progress.
        let plateau = params.ls_c1 * gd.abs() <= 16.0 * f64::EPSILON * e0.abs().max(f64::MIN_POSITIVE);
        if !plateau {
            let mut t = 1.0;
            for _ in 0..60 {
                let mut cand = u.clone();
                cand.add_scaled(t, &dir);
                let e = (problem.energy)(&cand);
                if e.is_finite() && e <= e0 + params.ls_c1 * t * gd {
                    u = cand;
                    accepted = true;
                    break;
                }
                t *= params.ls_backtrack;
            }
        }
        if !accepted {
            let mut t = 1.0;
            for _ in 0..40 {
                let mut cand = u.clone();
                cand.add_scaled(t, &dir);
                let new_sup = (problem.residual)(&cand).sup_norm();
                if new_sup.is_finite() && new_sup < rsup * (1.0 - 1e-4 * t) {
                    u = cand;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !accepted {
            return Err(SolverError::LineSearch {
                what: problem.label,
                iteration: iter,
                residual_sup: rsup,
                last: Box::new(u),
            });
        }
    }
    let res = (problem.residual)(&u);
    Err(SolverError::MaxIter {
        what: problem.label,
        iterations: params.newton_max_iter,
        residual_sup: res.sup_norm(),
        last: Box::new(u),
    })
}

/// Newton iteration on the residual itself with backtracking on its sup-norm.
/// Used to polish near-critical points (including saddles, where an energy
/// line search would walk away). Returns the polished field and its residual
/// sup-norm; the `MaxIter` error carries the best iterate seen.
pub(crate) fn polish(
    label: &'static str,
    residual: &dyn Fn(&Field) -> Field,
    hessian: &dyn Fn(&Field) -> SparseMatrix,
    init: Field,
    tol: f64,
    params: &SolverParams,
) -> Result<(Field, f64), SolverError> {
    let mut u = init;
    let mut best = u.clone();
    let mut best_sup = f64::INFINITY;
    for iter in 0..params.newton_max_iter {
        let res = (residual)(&u);
        let rsup = res.sup_norm();
        if !rsup.is_finite() {
            return Err(SolverError::NonFinite { what: label, iteration: iter });
        }
        if rsup < best_sup {
            best_sup = rsup;
            best = u.clone();
        }
        if rsup <= tol {
            return Ok((u, rsup));
        }
        let g = res.interior_vec();
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let base = (hessian)(&u);
        let scale = base.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut sigma = 0.0;
        let mut step: Option<Vec<f64>> = None;
        for _ in 0..20 {
            let mut h = base.clone();
            if sigma > 0.0 {
                h.shift_diag(sigma);
            }
            if let Ok(d) = h.solve(&neg_g) {
                if d.iter().all(|v| v.is_finite()) {
                    step = Some(d);
                    break;
                }
            }
            sigma = if sigma == 0.0 { 1e-10 * scale } else { sigma * 100.0 };
        }
        let Some(d) = step else {
            break;
        };
        let dir = Field::from_interior(u.grid(), &d);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand = u.clone();
            cand.add_scaled(t, &dir);
            let new_sup = (residual)(&cand).sup_norm();
            if new_sup.is_finite() && new_sup < rsup * (1.0 - 1e-4 * t) {
                u = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(SolverError::MaxIter {
        what: label,
        iterations: params.newton_max_iter,
        residual_sup: best_sup,
        last: Box::new(best),
    })
}

/// Direct damped-Newton minimization of a functional from a given start.
/// Public entry used both internally and for cross-validation runs (e.g.
/// comparing the monotone iteration against a one-shot solve).
pub fn minimize_energy(
    variant: &EnergyVariant,
    init: &Field,
    params: &SolverParams,
) -> Result<Field, SolverError> {
    // Fallible once up front; the closures below may then assume a valid pair.
    energy::residual(init, variant)?;
    let problem = Problem {
        label: "newton-minimize",
        energy: Box::new(move |u: &Field| energy::energy(u, variant).expect("validated")),
        residual: Box::new(move |u: &Field| energy::residual(u, variant).expect("validated")),
        hessian: Box::new(move |u: &Field| {
            energy::jacobian(u, variant, params.reg_eps).expect("validated")
        }),
        magnitude: Box::new(move |u: &Field| {
            energy::residual_magnitude_scale(u, variant).expect("validated")
        }),
    };
    minimize(&problem, init.clone(), params.newton_tol, params)
}
