//! Canonical sub- and supersolutions.
//!
//! The subsolution solves the pure Dirichlet problem on the inner p-region
//! (where the source is sublinear relative to the operator, `q < p - 1`) and
//! extends it by zero: at the interface its residual is minus an outgoing
//! flux, strictly negative, and it vanishes identically outside. The
//! supersolution solves the auxiliary problem with load 1 and works for every
//! coupling up to `λ̃ = 1 / (sup ū)^q`.
//!
//! Both constructions polish to near machine accuracy (target `1e-13`,
//! accepted up to `1e-12`) because their value is a *sign* statement about
//! the residual; a merely `1e-10`-accurate solve could leak positive noise.

use crate::energy::{self, aux_residual, grad_hessian, EnergyVariant};
use crate::mesh::{Field, Grid};
use crate::solvers::auxiliary::{solve_auxiliary, solve_auxiliary_from};
use crate::solvers::newton::polish;
use crate::solvers::{SolverError, SolverParams};
use std::sync::Arc;

/// Residual sign targets for the construction solves.
const SIGN_TOL: f64 = 1e-13;
const SIGN_ACCEPT: f64 = 1e-12;

fn polish_to_sign_accuracy(
    label: &'static str,
    residual: &dyn Fn(&Field) -> Field,
    hessian: &dyn Fn(&Field) -> crate::linalg::SparseMatrix,
    start: Field,
    params: &SolverParams,
) -> Result<Field, SolverError> {
    let tol = params.newton_tol.min(SIGN_TOL);
    match polish(label, residual, hessian, start, tol, params) {
        Ok((f, _)) => Ok(f),
        Err(SolverError::MaxIter { residual_sup, last, .. }) if residual_sup <= SIGN_ACCEPT => Ok(*last),
        Err(e) => Err(e),
    }
}

/// The single exponent shared by every edge of the grid; panics on mixed
/// grids, where the gradient operator has no scaling homogeneity.
fn uniform_exponent(grid: &Grid) -> f64 {
    let edges = if grid.dim() == 1 {
        grid.shape()[0] - 1
    } else {
        let [n0, n1] = grid.shape();
        (n0 - 1) * n1 + n0 * (n1 - 1)
    };
    let pc = grid.p_edge_count();
    assert!(
        pc == 0 || pc == edges,
        "the sublinear solve needs an exponent-uniform grid (every edge 2 or every edge p)"
    );
    if pc == 0 {
        2.0
    } else {
        grid.p()
    }
}

/// Positive solution of the Dirichlet problem `operator = λ u^q` on a grid
/// whose edges all share one exponent `pe` with `q < pe − 1` (the all-p
/// restriction to the inner region, or an all-2 grid with `q < 1`).
///
/// The solution amplitude varies over many orders of magnitude with the box
/// size and `λ` (it follows `λ^{1/(pe−1−q)}` times a high power of the box
/// width), so fixed absolute tolerances are meaningless here. Instead every
/// inner solve is normalized through the exact `(pe−1)`-homogeneity of the
/// gradient operator: loads are scaled to unit sup norm before the solve and
/// the result is scaled back, and the final Newton polish runs on the
/// equivalent unit-amplitude problem (`v = c·w`, `λ_eff = λ·c^{q+1−pe}`).
/// All iteration happens at O(1) amplitude where the solver tolerances mean
/// what they say.
pub fn solve_plaplacian_sublinear(
    grid: &Arc<Grid>,
    lambda: f64,
    params: &SolverParams,
) -> Result<Field, SolverError> {
    params.validate()?;
    assert!(lambda > 0.0, "sublinear solve needs a positive coupling");
    let q = grid.q();
    let pe = uniform_exponent(grid);
    assert!(q < pe - 1.0, "source is not sublinear against exponent {pe}");
    let inv = 1.0 / (pe - 1.0);

    // Fixed point v <- auxiliary(λ v^q), each solve normalized to unit load.
    let mut v = Field::constant(grid, 1.0);
    let mut converged = false;
    for iter in 0..params.monotone_max_iter {
        let mut load = v.clone();
        load.map_interior(|s| lambda * s.max(0.0).powf(q));
        let load_sup = load.sup_norm();
        if load_sup == 0.0 {
            v = Field::zero(grid);
            converged = true;
            break;
        }
        let amp = load_sup.powf(inv);
        let next = solve_auxiliary_from(&load.scaled(1.0 / load_sup), v.scaled(1.0 / amp), params)
            .map_err(|e| SolverError::Inner { iteration: iter, source: Box::new(e) })?
            .scaled(amp);
        let diff = next.max_abs_diff(&v);
        let scale = next.sup_norm().max(f64::MIN_POSITIVE);
        v = next;
        if diff <= params.monotone_tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        let variant = EnergyVariant::plain(lambda);
        return Err(SolverError::MaxIter {
            what: "sublinear fixed point",
            iterations: params.monotone_max_iter,
            residual_sup: energy::residual(&v, &variant)?.sup_norm(),
            last: Box::new(v),
        });
    }

    // Newton polish of the unit-amplitude equivalent problem.
    let c = v.sup_norm();
    if c == 0.0 {
        return Ok(v);
    }
    let lambda_eff = lambda * c.powf(q + 1.0 - pe);
    let variant = EnergyVariant::plain(lambda_eff);
    let eps = params.reg_eps;
    let res = move |u: &Field| energy::residual(u, &variant).expect("validated");
    let variant2 = EnergyVariant::plain(lambda_eff);
    let hess = move |u: &Field| energy::jacobian(u, &variant2, eps).expect("validated");
    let w = polish_to_sign_accuracy("sublinear polish", &res, &hess, v.scaled(1.0 / c), params)?;
    Ok(w.scaled(c))
}

/// The zero-extended inner solution together with the largest (most positive)
/// residual entry — a certificate that the field is a discrete subsolution
/// when `residual_max <= 0` up to solver noise.
#[derive(Debug, Clone)]
pub struct Subsolution {
    pub field: Field,
    pub residual_max: f64,
}

pub fn build_subsolution(
    grid: &Arc<Grid>,
    lambda: f64,
    params: &SolverParams,
) -> Result<Subsolution, SolverError> {
    let sub = grid.restrict_to_d2()?;
    let v = solve_plaplacian_sublinear(&sub.grid, lambda, params)?;
    let field = sub.extend_by_zero(&v);
    let res = energy::residual(&field, &EnergyVariant::plain(lambda))?;
    let residual_max = grid
        .interior_nodes()
        .iter()
        .map(|&i| res.get(i))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Subsolution { field, residual_max })
}

/// Supersolution data: `field` solves the auxiliary problem with load 1,
/// `lambda_tilde = 1 / sup^q` is the certified coupling range, and
/// `residual_min` is the smallest residual entry at `λ = lambda_tilde`
/// (nonnegative up to solver noise).
#[derive(Debug, Clone)]
pub struct Supersolution {
    pub field: Field,
    pub lambda_tilde: f64,
    pub sup: f64,
    pub residual_min: f64,
}

pub fn build_supersolution_small_lambda(
    grid: &Arc<Grid>,
    params: &SolverParams,
) -> Result<Supersolution, SolverError> {
    let one = Field::constant(grid, 1.0);
    let coarse = solve_auxiliary(grid, &one, params)?;
    let eps = params.reg_eps;
    let res = |u: &Field| aux_residual(u, &one);
    let hess = move |u: &Field| grad_hessian(u, eps);
    let field = polish_to_sign_accuracy("supersolution polish", &res, &hess, coarse, params)?;
    let sup = field.sup_norm();
    let lambda_tilde = 1.0 / sup.powf(grid.q());
    let res = energy::residual(&field, &EnergyVariant::plain(lambda_tilde))?;
    let residual_min = grid
        .interior_nodes()
        .iter()
        .map(|&i| res.get(i))
        .fold(f64::INFINITY, f64::min);
    Ok(Supersolution { field, lambda_tilde, sup, residual_min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, D2Layout, DomainSpec};

    fn mixed_grid(n: usize) -> Arc<Grid> {
        let spec = DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).unwrap();
        build_grid(&spec, n).unwrap()
    }

    #[test]
    fn inner_solution_scales_exactly_with_lambda() {
        // On the all-p restriction the discrete problem inherits the
        // continuous scaling v_λ = λ^γ v_1 with γ = 1/(p-1-q) = 2 exactly.
        let grid = mixed_grid(201);
        let sub = grid.restrict_to_d2().unwrap();
        let p = SolverParams::default();
        let v1 = solve_plaplacian_sublinear(&sub.grid, 1.0, &p).unwrap();
        let v2 = solve_plaplacian_sublinear(&sub.grid, 2.0, &p).unwrap();
        let gamma = 1.0 / (3.0 - 1.0 - 1.5);
        assert_eq!(gamma, 2.0);
        let defect = v2.max_abs_diff(&v1.scaled(2.0f64.powf(gamma))) / v2.sup_norm();
        assert!(defect < 1e-6, "scaling defect {defect:e}");
    }

    #[test]
    fn subsolution_vanishes_outside_and_has_nonpositive_residual() {
        let grid = mixed_grid(201);
        let sub = build_subsolution(&grid, 1.0, &SolverParams::default()).unwrap();
        let [a, b] = grid.d2_box().unwrap()[0];
        for &idx in grid.interior_nodes() {
            let x = grid.coords(idx)[0];
            if x < a || x > b {
                assert_eq!(sub.field.get(idx), 0.0);
            }
        }
        assert!(sub.residual_max <= 1e-12, "residual max {:e}", sub.residual_max);
        // Interface nodes carry a strictly negative flux residual: the inner
        // solution leaves through the interface and nothing balances it.
        // Its magnitude scales like the (tiny) inner amplitude to the
        // (p-1)-th power, so only the sign is asserted absolutely.
        let res = energy::residual(&sub.field, &EnergyVariant::plain(1.0)).unwrap();
        for &idx in grid.interface_nodes() {
            assert!(res.get(idx) < 0.0, "interface residual {:e}", res.get(idx));
        }
    }

    #[test]
    fn supersolution_on_pure_laplacian_grid_reproduces_torsion_threshold() {
        // ū = x(1-x)/2 exactly at nodes, so sup = 1/8 and λ̃ = 8^q = 8^{1.5}.
        let grid = Grid::uniform(1, [0.0, 0.0], [1.0, 1.0], [201, 1], 3.0, 1.5, D2Layout::Empty).unwrap();
        let sup = build_supersolution_small_lambda(&grid, &SolverParams::default()).unwrap();
        assert!((sup.sup - 0.125).abs() < 1e-12);
        assert!((sup.lambda_tilde - 22.627416997969522).abs() < 1e-9);
        assert!(sup.residual_min >= -1e-12);
        assert!(sup.field.min_interior() > 0.0);
    }

    #[test]
    fn mixed_grid_supersolution_certificate() {
        let grid = mixed_grid(201);
        let sup = build_supersolution_small_lambda(&grid, &SolverParams::default()).unwrap();
        assert!(sup.lambda_tilde > 1.0 && sup.lambda_tilde < 23.0);
        assert!(sup.residual_min >= -1e-12, "residual min {:e}", sup.residual_min);
        assert!(sup.field.min_interior() > 0.0);
    }
}
