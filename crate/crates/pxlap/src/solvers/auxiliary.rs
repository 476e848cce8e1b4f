//! The auxiliary problem: minimize `S(u) - Σ μ f u`, i.e. solve the mixed
//! operator against a fixed load. Strict convexity makes the minimizer unique
//! and independent of initialization; the default start is the solution of
//! the exponent-2 operator with the same load, which costs one linear solve
//! and sidesteps the degenerate p-edge weights at the zero field.

use crate::energy::{
    aux_energy, aux_residual, aux_residual_magnitude_scale, grad_hessian, hessian_all_two,
};
use crate::mesh::{Field, Grid};
use crate::solvers::newton::{minimize, Problem};
use crate::solvers::{SolverError, SolverParams};
use std::sync::Arc;

/// One linear solve of the exponent-2 operator against `μ f`.
pub(crate) fn warm_start(grid: &Arc<Grid>, f: &Field) -> Result<Field, SolverError> {
    let k = hessian_all_two(grid);
    let rhs: Vec<f64> = grid
        .interior_nodes()
        .iter()
        .map(|&idx| grid.node_measure(idx) * f.get(idx))
        .collect();
    let x = k.solve(&rhs)?;
    Ok(Field::from_interior(grid, &x))
}

/// Unique solution of the discrete auxiliary problem with load `f`.
pub fn solve_auxiliary(grid: &Arc<Grid>, f: &Field, params: &SolverParams) -> Result<Field, SolverError> {
    let init = warm_start(grid, f)?;
    solve_auxiliary_from(f, init, params)
}

/// Same problem from an explicit start (used by the monotone iteration to
/// warm-start each step at the previous iterate).
pub fn solve_auxiliary_from(f: &Field, init: Field, params: &SolverParams) -> Result<Field, SolverError> {
    assert!(
        f.grid().same_layout(init.grid()),
        "load and start live on different grids"
    );
    let eps = params.reg_eps;
    let problem = Problem {
        label: "auxiliary",
        energy: Box::new(move |u: &Field| aux_energy(u, f)),
        residual: Box::new(move |u: &Field| aux_residual(u, f)),
        hessian: Box::new(move |u: &Field| grad_hessian(u, eps)),
        magnitude: Box::new(move |u: &Field| aux_residual_magnitude_scale(u, f)),
    };
    // The residual's natural magnitude is the measure-weighted load; huge
    // loads (monotone iterates far up a diverging branch) cannot reach a
    // fixed absolute tolerance through f64 rounding, so the target scales
    // with the load once it exceeds unit size.
    let grid = f.grid();
    let load_scale = grid
        .interior_nodes()
        .iter()
        .map(|&idx| (grid.node_measure(idx) * f.get(idx)).abs())
        .fold(0.0f64, f64::max);
    let tol = params.newton_tol * load_scale.max(1.0);
    minimize(&problem, init, tol, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, D2Layout, DomainSpec};

    fn params() -> SolverParams {
        SolverParams::default()
    }

    #[test]
    fn zero_load_returns_zero() {
        let spec = DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).unwrap();
        let grid = build_grid(&spec, 41).unwrap();
        let u = solve_auxiliary(&grid, &Field::zero(&grid), &params()).unwrap();
        assert_eq!(u.sup_norm(), 0.0);
    }

    #[test]
    fn laplacian_torsion_is_discretely_exact() {
        // All-exponent-2 grid: the 3-point scheme solves -u'' = 1 exactly at
        // the nodes of the quadratic x(1-x)/2, so the sup-norm IS 0.125.
        let grid = Grid::uniform(1, [0.0, 0.0], [1.0, 1.0], [201, 1], 3.0, 1.5, D2Layout::Empty).unwrap();
        let one = Field::constant(&grid, 1.0);
        let u = solve_auxiliary(&grid, &one, &params()).unwrap();
        assert!((u.sup_norm() - 0.125).abs() < 1e-12);
        for &idx in grid.interior_nodes() {
            let x = grid.coords(idx)[0];
            assert!((u.get(idx) - 0.5 * x * (1.0 - x)).abs() < 1e-12);
        }
    }

    #[test]
    fn p_torsion_matches_closed_form() {
        // All-exponent-p grid, p = 3: u = ((p-1)/p) (0.5^{p/(p-1)} - |x-1/2|^{p/(p-1)}),
        // sup = (2/3) * 0.5^{1.5}.
        let grid = Grid::uniform(1, [0.0, 0.0], [1.0, 1.0], [201, 1], 3.0, 1.5, D2Layout::Full).unwrap();
        let one = Field::constant(&grid, 1.0);
        let u = solve_auxiliary(&grid, &one, &params()).unwrap();
        let exact_sup = (2.0 / 3.0) * 0.5f64.powf(1.5);
        assert!((exact_sup - 0.23570226039551587).abs() < 1e-16);
        let err = (u.sup_norm() - exact_sup).abs();
        assert!(err < 1e-3, "sup err {err:e}");
        // Residual of the returned field satisfies the unregularized equation.
        let res = aux_residual(&u, &one);
        assert!(res.sup_norm() <= 1e-10);
    }

    #[test]
    fn minimizer_is_independent_of_initialization() {
        let spec = DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).unwrap();
        let grid = build_grid(&spec, 101).unwrap();
        let f = Field::from_fn(&grid, |x| (7.0 * x[0]).sin());
        let a = solve_auxiliary(&grid, &f, &params()).unwrap();
        let b = solve_auxiliary_from(&f, Field::constant(&grid, 5.0), &params()).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn two_dimensional_mixed_solve_converges() {
        let spec = DomainSpec::square((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).unwrap();
        let grid = build_grid(&spec, 21).unwrap();
        let one = Field::constant(&grid, 1.0);
        let u = solve_auxiliary(&grid, &one, &params()).unwrap();
        assert!(u.min_interior() > 0.0);
        assert!(aux_residual(&u, &one).sup_norm() <= 1e-10);
    }

    use crate::mesh::Grid;
}
