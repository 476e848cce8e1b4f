//! Path-deformation mountain-pass solver.
//!
//! Between a local minimizer and a far-away low-energy peak there is a
//! mountain ridge; the lowest crossing point is a critical point at the
//! mountain-pass level. The deformation algorithm discretizes the connecting
//! segment, repeatedly pushes the highest path node downhill along a
//! Sobolev-preconditioned gradient, and re-evens the path by arclength so
//! nodes cannot pile up. The path maximum either settles on a genuine
//! critical point (residual below tolerance) or sinks to the minimizer's own
//! level, which certifies the degenerate no-ridge case.

use crate::energy::{self, hessian_all_two, EnergyVariant};
use crate::linalg::SparseMatrix;
use crate::mesh::{Field, Grid};
use crate::solvers::newton::polish;
use crate::solvers::{SolverError, SolverParams};
use std::sync::Arc;

#[derive(Debug, Clone, Copy)]
pub struct MpParams {
    /// Path discretization nodes including both endpoints.
    pub path_nodes: usize,
    /// Residual sup-norm target at the path maximum.
    pub mp_tol: f64,
    /// Outer deformation sweep budget.
    pub max_outer: usize,
    /// Distinctness threshold relative to the base point's sup norm.
    pub distinct_rel: f64,
    /// Collapse is declared when the path maximum is within this of the base level.
    pub collapse_tol: f64,
}

impl Default for MpParams {
    fn default() -> MpParams {
        MpParams {
            path_nodes: 41,
            mp_tol: 1e-6,
            max_outer: 5000,
            distinct_rel: 1e-2,
            collapse_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MpStatus {
    /// Polished critical point at or above the base level, distinct from the base.
    Found,
    /// The path maximum sank to the base level: no ridge separates the
    /// endpoints (the degenerate accumulating-minimizers case).
    PathCollapsed,
    /// Budget exhausted before either certificate.
    MaxIter,
}

impl MpStatus {
    /// Stable lowercase token used in CSV cells and log lines.
    pub fn token(self) -> &'static str {
        match self {
            MpStatus::Found => "found",
            MpStatus::PathCollapsed => "path_collapsed",
            MpStatus::MaxIter => "max_iter",
        }
    }
}

impl std::fmt::Display for MpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone)]
pub struct MpOutcome {
    pub status: MpStatus,
    /// The path-maximum field (polished when `Found`).
    pub critical_point: Field,
    /// Energy of `critical_point` under the run's functional.
    pub level: f64,
    /// Residual sup norm at `critical_point`.
    pub residual_sup: f64,
    /// Energy of the base endpoint.
    pub base_level: f64,
    pub outer_iterations: usize,
    /// Energies along the final path.
    pub path_levels: Vec<f64>,
    /// Path-maximum energy after every outer sweep.
    pub max_trace: Vec<f64>,
}

/// Unit-amplitude bump supported in the widest exponent-2 slab: a half-width
/// sine arch in `x` (product with a full sine in `y` in two dimensions).
/// Driving such a bump to large amplitude sends the functional to `-∞`
/// because on exponent-2 edges the gradient term grows like `T^2` while the
/// source term removes `T^{q+1}` with `q + 1 > 2`.
fn d1_bump(grid: &Arc<Grid>) -> Field {
    let (lo, hi) = widest_d1_interval(grid);
    let len = hi - lo;
    assert!(len > 0.0, "no exponent-2 slab to support the peak bump");
    let (s_lo, s_len) = (lo + 0.25 * len, 0.5 * len);
    let dim = grid.dim();
    let (y_lo, y_len) = (grid.origin[1], grid.extent[1]);
    Field::from_fn(grid, |xy| {
        let x = xy[0];
        if x <= s_lo || x >= s_lo + s_len {
            return 0.0;
        }
        let mut v = (std::f64::consts::PI * (x - s_lo) / s_len).sin();
        if dim == 2 {
            v *= (std::f64::consts::PI * (xy[1] - y_lo) / y_len).sin();
        }
        v
    })
}

/// Widest (leftmost on ties) x-interval outside the inner box.
fn widest_d1_interval(grid: &Grid) -> (f64, f64) {
    let lo = grid.origin[0];
    let hi = grid.origin[0] + grid.extent[0];
    match grid.d2_box() {
        None => (lo, hi),
        Some(d2) => {
            let (a, b) = (d2[0][0], d2[0][1]);
            let left = (lo, a.min(hi));
            let right = (b.max(lo), hi);
            if left.1 - left.0 >= right.1 - right.0 {
                left
            } else {
                right
            }
        }
    }
}

/// Scales the canonical bump until its energy undercuts `base_level - 1`,
/// guaranteeing the mountain-pass geometry between `utilde` and the peak.
pub fn build_peak(variant: &EnergyVariant, utilde: &Field) -> Result<Field, SolverError> {
    let grid = utilde.grid();
    let bump = d1_bump(grid);
    let target = energy::energy(utilde, variant)? - 1.0;
    let mut t = 1.0;
    for _ in 0..80 {
        let peak = bump.scaled(t);
        let level = energy::energy(&peak, variant)?;
        if level < target {
            return Ok(peak);
        }
        t *= 2.0;
    }
    Err(SolverError::PostconditionFailed {
        what: "peak amplitude doubling never undercut the base level",
        measured: t,
        bound: target,
    })
}

fn path_distance(a: &Field, b: &Field) -> f64 {
    let mut d = a.clone();
    d.add_scaled(-1.0, b);
    d.l2_mu()
}

/// Arclength re-evening: resample the polyline at uniform parameter values.
/// Endpoints are moved by copy, never recomputed, so they stay bit-for-bit.
fn re_even(path: &mut Vec<Field>) {
    let m = path.len();
    let mut cum = vec![0.0; m];
    for k in 1..m {
        cum[k] = cum[k - 1] + path_distance(&path[k - 1], &path[k]);
    }
    let total = cum[m - 1];
    if total <= 0.0 {
        return;
    }
    let mut out = Vec::with_capacity(m);
    out.push(path[0].clone());
    let mut seg = 0usize;
    for i in 1..m - 1 {
        let target = total * (i as f64) / ((m - 1) as f64);
        while seg + 2 < m && cum[seg + 1] < target {
            seg += 1;
        }
        let den = cum[seg + 1] - cum[seg];
        let theta = if den > 0.0 { (target - cum[seg]) / den } else { 0.0 };
        out.push(path[seg].lerp(&path[seg + 1], theta));
    }
    out.push(path[m - 1].clone());
    *path = out;
}

const LEVEL_SLACK: f64 = 1e-8;

/// Runs the deformation between `utilde` (a local minimizer of `variant`)
/// and `peak` (energy below the base level by at least 1, from [`build_peak`]).
pub fn mountain_pass(
    variant: &EnergyVariant,
    utilde: &Field,
    peak: &Field,
    params: &SolverParams,
    mp: &MpParams,
) -> Result<MpOutcome, SolverError> {
    params.validate()?;
    assert!(mp.path_nodes >= 3, "a path needs at least one interior node");
    assert!(utilde.grid().same_layout(peak.grid()), "endpoints live on different grids");
    let grid = utilde.grid();
    let base_level = energy::energy(utilde, variant)?;
    // Validate the variant/grid pair once; closures below may assume it.
    energy::residual(utilde, variant)?;

    let m = mp.path_nodes;
    let mut path: Vec<Field> = (0..m)
        .map(|i| {
            if i == 0 {
                utilde.clone()
            } else if i == m - 1 {
                peak.clone()
            } else {
                utilde.lerp(peak, (i as f64) / ((m - 1) as f64))
            }
        })
        .collect();

    // Constant Sobolev metric: the all-exponent-2 stiffness matrix. Solving
    // K d = r turns the raw residual into a smoothed descent direction whose
    // steps stay in the right function-space scaling.
    let metric: SparseMatrix = hessian_all_two(grid);

    let eval = |f: &Field| energy::energy(f, variant).expect("validated variant");
    let resid = |f: &Field| energy::residual(f, variant).expect("validated variant");

    let mut levels: Vec<f64> = path.iter().map(&eval).collect();
    let mut max_trace = Vec::new();
    let mut outer = 0usize;
    let mut candidate: Option<(Field, f64)> = None; // (field, residual sup)

    while outer < mp.max_outer {
        outer += 1;
        let (k, max_level) = levels
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, &v)| (k, v))
            .expect("path is non-empty");
        max_trace.push(max_level);

        if max_level <= base_level + mp.collapse_tol {
            let point = path[k].clone();
            let rsup = resid(&point).sup_norm();
            return Ok(MpOutcome {
                status: MpStatus::PathCollapsed,
                critical_point: point,
                level: max_level,
                residual_sup: rsup,
                base_level,
                outer_iterations: outer,
                path_levels: levels,
                max_trace,
            });
        }

        // The peak endpoint sits at least 1 below the base level, the base
        // endpoint exactly at it; an endpoint argmax therefore means the
        // interior sank below both, which the collapse check above caught.
        let k = k.clamp(1, m - 2);
        let r = resid(&path[k]);
        let rsup = r.sup_norm();
        if rsup <= mp.mp_tol {
            candidate = Some((path[k].clone(), rsup));
            break;
        }

        // Preconditioned descent on the path maximum.
        let rhs = r.interior_vec();
        let d = metric.solve(&rhs)?;
        let gd: f64 = rhs.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !gd.is_finite() || gd <= 0.0 {
            // The metric is positive definite, so this only happens on a
            // numerically zero gradient: accept the node as the candidate.
            candidate = Some((path[k].clone(), rsup));
            break;
        }
        let dir = Field::from_interior(grid, &d);
        let e0 = levels[k];
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut trial = path[k].clone();
            trial.add_scaled(-t, &dir);
            let et = eval(&trial);
            if et.is_finite() && et <= e0 - params.ls_c1 * t * gd {
                path[k] = trial;
                levels[k] = et;
                moved = true;
                break;
            }
            t *= params.ls_backtrack;
        }
        if !moved {
            // Numerically stuck maximum: keep it as the best available
            // candidate rather than spinning the remaining budget.
            candidate = Some((path[k].clone(), rsup));
            break;
        }

        re_even(&mut path);
        for (lv, node) in levels.iter_mut().zip(&path) {
            *lv = eval(node);
        }
    }

    let (rough, rough_sup) = match candidate {
        Some(c) => c,
        None => {
            // Budget exhausted: report the current path maximum.
            let (k, _) = levels
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("path is non-empty");
            let k = k.clamp(1, m - 2);
            let rsup = resid(&path[k]).sup_norm();
            (path[k].clone(), rsup)
        }
    };

    // Full Newton polish of the residual from the deformation's candidate.
    let eps = params.reg_eps;
    let hess = |f: &Field| energy::jacobian(f, variant, eps).expect("validated variant");
    let (point, rsup) = match polish("mountain-pass polish", &resid, &hess, rough.clone(), mp.mp_tol, params) {
        Ok(pair) => pair,
        Err(SolverError::MaxIter { residual_sup, last, .. }) => (*last, residual_sup),
        Err(_) => (rough, rough_sup),
    };
    let level = eval(&point);
    let distinct = {
        let mut d = point.clone();
        d.add_scaled(-1.0, utilde);
        d.sup_norm() > mp.distinct_rel * utilde.sup_norm()
    };
    let status = if rsup <= mp.mp_tol && level >= base_level - LEVEL_SLACK && distinct {
        MpStatus::Found
    } else if rsup <= mp.mp_tol && !distinct {
        // Converged back onto the base minimizer: no separated ridge.
        MpStatus::PathCollapsed
    } else {
        MpStatus::MaxIter
    };
    Ok(MpOutcome {
        status,
        critical_point: point,
        level,
        residual_sup: rsup,
        base_level,
        outer_iterations: outer,
        path_levels: levels,
        max_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, DomainSpec};
    use crate::solvers::constructions::build_supersolution_small_lambda;
    use crate::solvers::monotone::{monotone_iteration, IterationStatus};
    use crate::solvers::truncated::minimize_truncated;

    fn mixed_grid(n: usize) -> Arc<Grid> {
        let spec = DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).unwrap();
        build_grid(&spec, n).unwrap()
    }

    #[test]
    fn bump_is_supported_in_the_widest_slab() {
        let grid = mixed_grid(201);
        let w = d1_bump(&grid);
        for &idx in grid.interior_nodes() {
            let x = grid.coords(idx)[0];
            if w.get(idx) != 0.0 {
                assert!(x > 0.1 - 1e-12 && x < 0.3 + 1e-12, "bump leaked to x = {x}");
            }
        }
        assert!(w.sup_norm() > 0.9);
    }

    #[test]
    fn peak_undercuts_the_base_level_by_one() {
        let grid = mixed_grid(201);
        let params = SolverParams::default();
        let lt = build_supersolution_small_lambda(&grid, &params).unwrap().lambda_tilde;
        let lambda = lt / 2.0;
        let u1 = monotone_iteration(&grid, 0.9 * lambda, None, &params).unwrap().solution.unwrap();
        let variant = EnergyVariant::floor_truncated(lambda, u1.clone()).unwrap();
        let utilde = {
            let u2 = monotone_iteration(&grid, 1.1 * lambda, None, &params).unwrap().solution.unwrap();
            minimize_truncated(lambda, &u1, &u2, &params).unwrap()
        };
        let peak = build_peak(&variant, &utilde).unwrap();
        let pl = energy::energy(&peak, &variant).unwrap();
        let bl = energy::energy(&utilde, &variant).unwrap();
        assert!(pl < bl - 1.0, "peak level {pl} vs base {bl}");
    }

    #[test]
    fn deformation_finds_a_distinct_critical_point() {
        let grid = mixed_grid(101);
        let params = SolverParams::default();
        let lt = build_supersolution_small_lambda(&grid, &params).unwrap().lambda_tilde;
        let lambda = lt / 2.0;
        let run = |l: f64| {
            let out = monotone_iteration(&grid, l, None, &params).unwrap();
            assert_eq!(out.status, IterationStatus::Converged);
            out.solution.unwrap()
        };
        let u1 = run(0.9 * lambda);
        let u2 = run(1.1 * lambda);
        let utilde = minimize_truncated(lambda, &u1, &u2, &params).unwrap();
        let variant = EnergyVariant::floor_truncated(lambda, u1.clone()).unwrap();
        let peak = build_peak(&variant, &utilde).unwrap();
        let out = mountain_pass(&variant, &utilde, &peak, &params, &MpParams::default()).unwrap();
        match out.status {
            MpStatus::Found => {
                assert!(out.residual_sup <= 1e-6);
                assert!(out.level >= out.base_level - 1e-8);
                // The floor truncation keeps the second point above the floor.
                for &idx in grid.interior_nodes() {
                    assert!(out.critical_point.get(idx) >= u1.get(idx) - 1e-8);
                }
            }
            MpStatus::PathCollapsed => {
                assert!(out.level <= out.base_level + 1e-3, "collapse must sit at the base level");
            }
            MpStatus::MaxIter => panic!("deformation exhausted its budget: residual {:e}", out.residual_sup),
        }
    }
}
