//! Discrete energies, residuals, Jacobians and norms.
//!
//! The gradient part of every functional is the same conservative edge sum
//!
//! ```text
//!   S(u) = Σ_edges  m_e · Φ_{p_e}(δ_e),      Φ_p(s) = |s|^p / p,
//! ```
//!
//! with `δ_e` the difference quotient along the edge and `m_e` the edge
//! measure (its transverse quadrature weight times the edge length). In 2D an
//! exponent-p edge replaces `|δ_e|` by the full gradient magnitude
//! `sqrt(δ_e² + r_e²)`, where `r_e` is the mean of the adjacent perpendicular
//! difference quotients, and carries half the measure so the two edge
//! orientations tile the p-region exactly once. Exponent-2 edges keep the
//! plain splitting, which reproduces the classical 3-/5-point Laplacian.
//!
//! Zero-order terms use the lumped nodal quadrature `Σ_i μ_i N(x_i, u_i)`.
//! The four functional flavours differ only in `N` (and its density `n`):
//!
//! * [`EnergyVariant::plain`] — `n(s) = |s|^{q-1} s` (odd power law),
//! * [`EnergyVariant::positive_part`] — `n(s) = (s₊)^q`,
//! * [`EnergyVariant::interval_truncated`] — the power law frozen below a
//!   positive lower field and above an upper field,
//! * [`EnergyVariant::floor_truncated`] — frozen below the lower field only.
//!
//! `residual` is the exact nodal gradient of `energy` (boundary entries are
//! zero; Dirichlet nodes never enter the linear algebra), and `jacobian` is
//! the exact Hessian except for the ε-regularization of the degenerate edge
//! weights: an exponent-p edge contributes weight
//! `(p-1)(δ² + ε²)^{(p-2)/2}` instead of the possibly vanishing exact one.
//! Residuals are never regularized.

use crate::linalg::SparseMatrix;
use crate::mesh::{Field, Grid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("truncation ordering violated at node {node}: lower {lower} > upper {upper}")]
    TruncationOrdering { node: usize, lower: f64, upper: f64 },
    #[error("truncation lower bound must be positive at interior nodes; node {node} has {value}")]
    TruncationNotPositive { node: usize, value: f64 },
}

/// Which zero-order density a functional uses. Truncation knots are stored as
/// owned fields so a variant can outlive the solver state that built it.
#[derive(Debug, Clone)]
pub enum EnergyVariant {
    /// `F_λ`: signed power law, the functional whose critical points solve the
    /// untruncated equation.
    Plain { lambda: f64 },
    /// `G_λ`: positive-part power law (negative values cost nothing).
    PositivePart { lambda: f64 },
    /// `G̃_λ`: power law frozen outside the ordered interval `[lower, upper]`.
    IntervalTruncated { lambda: f64, lower: Field, upper: Field },
    /// `Ĝ_λ`: power law frozen below `floor` only; unbounded above.
    FloorTruncated { lambda: f64, floor: Field },
}

impl EnergyVariant {
    pub fn plain(lambda: f64) -> EnergyVariant {
        EnergyVariant::Plain { lambda }
    }

    pub fn positive_part(lambda: f64) -> EnergyVariant {
        EnergyVariant::PositivePart { lambda }
    }

    /// Requires `0 < lower <= upper` at every interior node.
    pub fn interval_truncated(lambda: f64, lower: Field, upper: Field) -> Result<EnergyVariant, EnergyError> {
        if !lower.grid().same_layout(upper.grid()) {
            return Err(EnergyError::GridMismatch);
        }
        for &idx in lower.grid().interior_nodes() {
            let (l, u) = (lower.get(idx), upper.get(idx));
            if !(l > 0.0) {
                return Err(EnergyError::TruncationNotPositive { node: idx, value: l });
            }
            if l > u {
                return Err(EnergyError::TruncationOrdering { node: idx, lower: l, upper: u });
            }
        }
        Ok(EnergyVariant::IntervalTruncated { lambda, lower, upper })
    }

    /// Requires `floor > 0` at every interior node.
    pub fn floor_truncated(lambda: f64, floor: Field) -> Result<EnergyVariant, EnergyError> {
        for &idx in floor.grid().interior_nodes() {
            let l = floor.get(idx);
            if !(l > 0.0) {
                return Err(EnergyError::TruncationNotPositive { node: idx, value: l });
            }
        }
        Ok(EnergyVariant::FloorTruncated { lambda, floor })
    }

    pub fn lambda(&self) -> f64 {
        match self {
            EnergyVariant::Plain { lambda }
            | EnergyVariant::PositivePart { lambda }
            | EnergyVariant::IntervalTruncated { lambda, .. }
            | EnergyVariant::FloorTruncated { lambda, .. } => *lambda,
        }
    }

    /// Same functional at a different coupling.
    pub fn with_lambda(&self, lambda: f64) -> EnergyVariant {
        let mut v = self.clone();
        match &mut v {
            EnergyVariant::Plain { lambda: l }
            | EnergyVariant::PositivePart { lambda: l }
            | EnergyVariant::IntervalTruncated { lambda: l, .. }
            | EnergyVariant::FloorTruncated { lambda: l, .. } => *l = lambda,
        }
        v
    }

    fn check_grid(&self, grid: &Grid) -> Result<(), EnergyError> {
        let ok = match self {
            EnergyVariant::Plain { .. } | EnergyVariant::PositivePart { .. } => true,
            EnergyVariant::IntervalTruncated { lower, upper, .. } => {
                lower.grid().same_layout(grid) && upper.grid().same_layout(grid)
            }
            EnergyVariant::FloorTruncated { floor, .. } => floor.grid().same_layout(grid),
        };
        if ok {
            Ok(())
        } else {
            Err(EnergyError::GridMismatch)
        }
    }

    /// Zero-order density `n(x, s)` (for the truncated variants this is the
    /// knotted function; at the knots it takes the middle-branch value).
    pub fn source(&self, grid: &Grid, node: usize, s: f64) -> f64 {
        let q = grid.q();
        match self {
            EnergyVariant::Plain { .. } => signed_power(s, q),
            EnergyVariant::PositivePart { .. } => {
                if s > 0.0 {
                    s.powf(q)
                } else {
                    0.0
                }
            }
            EnergyVariant::IntervalTruncated { lower, upper, .. } => {
                let (l, u) = (lower.get(node), upper.get(node));
                if s <= l {
                    l.powf(q)
                } else if s >= u {
                    u.powf(q)
                } else {
                    s.powf(q)
                }
            }
            EnergyVariant::FloorTruncated { floor, .. } => {
                let l = floor.get(node);
                if s <= l {
                    l.powf(q)
                } else {
                    s.powf(q)
                }
            }
        }
    }

    /// Antiderivative `N(x, s) = ∫₀ˢ n(x, t) dt`, in closed form per branch.
    pub fn antiderivative(&self, grid: &Grid, node: usize, s: f64) -> f64 {
        let q = grid.q();
        let q1 = q + 1.0;
        match self {
            EnergyVariant::Plain { .. } => s.abs().powf(q1) / q1,
            EnergyVariant::PositivePart { .. } => {
                if s > 0.0 {
                    s.powf(q1) / q1
                } else {
                    0.0
                }
            }
            EnergyVariant::IntervalTruncated { lower, upper, .. } => {
                let (l, u) = (lower.get(node), upper.get(node));
                piecewise_antiderivative(q, l, Some(u), s)
            }
            EnergyVariant::FloorTruncated { floor, .. } => {
                piecewise_antiderivative(q, floor.get(node), None, s)
            }
        }
    }

    /// Slope `∂n/∂s`; at truncation knots the middle-branch value is used so
    /// Newton linearizations stay informative on the active set.
    pub fn source_slope(&self, grid: &Grid, node: usize, s: f64) -> f64 {
        let q = grid.q();
        match self {
            // At s = 0 the sublinear slope (q < 1) is unbounded; a zero
            // stand-in keeps linearizations finite there — the node's source
            // value is 0 anyway, and iterates leave 0 after one sweep.
            EnergyVariant::Plain { .. } => {
                if s == 0.0 && q < 1.0 {
                    0.0
                } else {
                    q * s.abs().powf(q - 1.0)
                }
            }
            EnergyVariant::PositivePart { .. } => {
                if s > 0.0 {
                    q * s.powf(q - 1.0)
                } else {
                    0.0
                }
            }
            EnergyVariant::IntervalTruncated { lower, upper, .. } => {
                let (l, u) = (lower.get(node), upper.get(node));
                if s >= l && s <= u && s > 0.0 {
                    q * s.powf(q - 1.0)
                } else {
                    0.0
                }
            }
            EnergyVariant::FloorTruncated { floor, .. } => {
                let l = floor.get(node);
                if s >= l && s > 0.0 {
                    q * s.powf(q - 1.0)
                } else {
                    0.0
                }
            }
        }
    }
}

/// The odd power `|s|^{q-1}·s`. The zero case is split out because for
/// `q < 1` the negative power is infinite and the product would round to NaN
/// instead of the limit 0.
pub fn signed_power(s: f64, q: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.abs().powf(q - 1.0) * s
    }
}

/// `∫₀ˢ` of the knotted power law with lower knot `l` and optional upper knot.
fn piecewise_antiderivative(q: f64, l: f64, upper: Option<f64>, s: f64) -> f64 {
    let q1 = q + 1.0;
    let lq = l.powf(q);
    if s <= l {
        return lq * s;
    }
    let middle = |t: f64| lq * l + (t.powf(q1) - l.powf(q1)) / q1;
    match upper {
        Some(u) if s >= u => middle(u) + u.powf(q) * (s - u),
        _ => middle(s),
    }
}

/// Discrete norms of a field: sup and lumped-L² over nodes, the broken
/// gradient seminorms over the two edge families, and their sum (the natural
/// norm of the mixed problem).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct NormReport {
    pub sup: f64,
    pub l2: f64,
    pub grad_l2_d1: f64,
    pub grad_lp_d2: f64,
    pub bracket: f64,
}

struct EdgeGeom {
    a: usize,
    b: usize,
    exponent: f64,
    measure: f64,
    inv_h: f64,
    /// Transverse difference pairs (hi, lo) for the 2D reconstruction.
    pairs: [(usize, usize); 4],
    npairs: usize,
    inv_ht: f64,
}

/// Visits every edge once. 1D grids produce no transverse pairs.
fn for_each_edge(grid: &Grid, mut f: impl FnMut(&EdgeGeom)) {
    let [n0, n1] = grid.n;
    let dim = grid.dim;
    let (h0, h1) = (grid.h[0], grid.h[1]);
    // x-edges
    for j in 0..n1 {
        let wy = if dim == 1 {
            1.0
        } else if j == 0 || j == n1 - 1 {
            0.5 * h1
        } else {
            h1
        };
        for i in 0..n0 - 1 {
            let exponent = grid.exp_x[j * (n0 - 1) + i];
            let a = j * n0 + i;
            let b = a + 1;
            let mut pairs = [(0usize, 0usize); 4];
            let mut npairs = 0;
            if dim == 2 && exponent != 2.0 {
                for col in [i, i + 1] {
                    if j + 1 < n1 {
                        pairs[npairs] = ((j + 1) * n0 + col, j * n0 + col);
                        npairs += 1;
                    }
                    if j > 0 {
                        pairs[npairs] = (j * n0 + col, (j - 1) * n0 + col);
                        npairs += 1;
                    }
                }
            }
            f(&EdgeGeom {
                a,
                b,
                exponent,
                measure: h0 * wy,
                inv_h: 1.0 / h0,
                pairs,
                npairs,
                inv_ht: if dim == 2 { 1.0 / h1 } else { 0.0 },
            });
        }
    }
    if dim == 1 {
        return;
    }
    // y-edges
    for j in 0..n1 - 1 {
        for i in 0..n0 {
            let wx = if i == 0 || i == n0 - 1 { 0.5 * h0 } else { h0 };
            let exponent = grid.exp_y[j * n0 + i];
            let a = j * n0 + i;
            let b = a + n0;
            let mut pairs = [(0usize, 0usize); 4];
            let mut npairs = 0;
            if exponent != 2.0 {
                for row in [j, j + 1] {
                    if i + 1 < n0 {
                        pairs[npairs] = (row * n0 + i + 1, row * n0 + i);
                        npairs += 1;
                    }
                    if i > 0 {
                        pairs[npairs] = (row * n0 + i, row * n0 + i - 1);
                        npairs += 1;
                    }
                }
            }
            f(&EdgeGeom {
                a,
                b,
                exponent,
                measure: h1 * wx,
                inv_h: 1.0 / h1,
                pairs,
                npairs,
                inv_ht: 1.0 / h0,
            });
        }
    }
}

fn transverse_mean(u: &[f64], e: &EdgeGeom) -> f64 {
    if e.npairs == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..e.npairs {
        let (hi, lo) = e.pairs[k];
        s += u[hi] - u[lo];
    }
    s * e.inv_ht / e.npairs as f64
}

/// Gradient part `S(u)` alone (every functional shares it).
pub fn gradient_energy(u: &Field) -> f64 {
    let grid = u.grid();
    let vals = u.values();
    let dim = grid.dim();
    let mut total = 0.0;
    for_each_edge(grid, |e| {
        let delta = (vals[e.b] - vals[e.a]) * e.inv_h;
        if e.exponent == 2.0 {
            total += e.measure * 0.5 * delta * delta;
        } else if dim == 1 {
            total += e.measure * delta.abs().powf(e.exponent) / e.exponent;
        } else {
            let r = transverse_mean(vals, e);
            let g2 = delta * delta + r * r;
            total += 0.5 * e.measure * g2.powf(0.5 * e.exponent) / e.exponent;
        }
    });
    total
}

/// Full functional value for the chosen variant.
pub fn energy(u: &Field, variant: &EnergyVariant) -> Result<f64, EnergyError> {
    let grid = u.grid();
    variant.check_grid(grid)?;
    let lambda = variant.lambda();
    let mut total = gradient_energy(u);
    let vals = u.values();
    for idx in 0..grid.node_count() {
        total -= lambda * grid.node_measure(idx) * variant.antiderivative(grid, idx, vals[idx]);
    }
    Ok(total)
}

/// Functional of the auxiliary linear-load problem: `S(u) - Σ μ f u`.
pub fn aux_energy(u: &Field, f: &Field) -> f64 {
    debug_assert!(u.grid().same_layout(f.grid()));
    gradient_energy(u) - mu_dot(f, u)
}

/// Lumped duality pairing `Σ_i μ_i a_i b_i`.
pub fn mu_dot(a: &Field, b: &Field) -> f64 {
    let grid = a.grid();
    let mut s = 0.0;
    for (idx, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        s += grid.node_measure(idx) * x * y;
    }
    s
}

fn gradient_residual_into(u: &Field, out: &mut Vec<f64>) {
    let grid = u.grid();
    let vals = u.values();
    let dim = grid.dim();
    out.clear();
    out.resize(grid.node_count(), 0.0);
    for_each_edge(grid, |e| {
        let delta = (vals[e.b] - vals[e.a]) * e.inv_h;
        if e.exponent == 2.0 {
            let flux = e.measure * delta * e.inv_h;
            out[e.a] -= flux;
            out[e.b] += flux;
        } else if dim == 1 {
            let flux = e.measure * delta.abs().powf(e.exponent - 2.0) * delta * e.inv_h;
            out[e.a] -= flux;
            out[e.b] += flux;
        } else {
            let r = transverse_mean(vals, e);
            let g2 = delta * delta + r * r;
            if g2 > 0.0 {
                let coef = 0.5 * e.measure * g2.powf(0.5 * e.exponent - 1.0);
                let dflux = coef * delta * e.inv_h;
                out[e.a] -= dflux;
                out[e.b] += dflux;
                let rflux = coef * r * e.inv_ht / e.npairs as f64;
                for k in 0..e.npairs {
                    let (hi, lo) = e.pairs[k];
                    out[hi] += rflux;
                    out[lo] -= rflux;
                }
            }
        }
    });
}

/// Exact nodal gradient of [`energy`]; boundary entries are zero.
pub fn residual(u: &Field, variant: &EnergyVariant) -> Result<Field, EnergyError> {
    let grid = u.grid();
    variant.check_grid(grid)?;
    let lambda = variant.lambda();
    let mut out = Field::zero(grid);
    gradient_residual_into(u, &mut out.values);
    let vals = u.values();
    for &idx in grid.interior_nodes() {
        out.values[idx] -= lambda * grid.node_measure(idx) * variant.source(grid, idx, vals[idx]);
    }
    for idx in 0..grid.node_count() {
        if grid.is_boundary(idx) {
            out.values[idx] = 0.0;
        }
    }
    Ok(out)
}

/// Sum of the gradient-part residual over boundary nodes, *before* the
/// Dirichlet zeroing applied by [`residual`]. The edge assembly telescopes
/// (each edge deposits `+flux` and `-flux`), so summing over all nodes gives
/// zero identically; at a solution of the load problem the boundary sum must
/// therefore equal minus the measure-weighted load total — a global
/// conservation statement usable as a cross-check.
pub fn boundary_gradient_flux_sum(u: &Field) -> f64 {
    let grid = u.grid();
    let mut out = Vec::new();
    gradient_residual_into(u, &mut out);
    (0..grid.node_count()).filter(|&i| grid.is_boundary(i)).map(|i| out[i]).sum()
}

/// Gradient of the auxiliary functional `S(u) - Σ μ f u`.
pub fn aux_residual(u: &Field, f: &Field) -> Field {
    debug_assert!(u.grid().same_layout(f.grid()));
    let grid = u.grid();
    let mut out = Field::zero(grid);
    gradient_residual_into(u, &mut out.values);
    for &idx in grid.interior_nodes() {
        out.values[idx] -= grid.node_measure(idx) * f.get(idx);
    }
    for idx in 0..grid.node_count() {
        if grid.is_boundary(idx) {
            out.values[idx] = 0.0;
        }
    }
    out
}

/// Same edge loop as [`gradient_residual_into`] but accumulating the
/// *absolute values* of the flux contributions. `f64::EPSILON` times the
/// resulting nodal sums bounds the rounding noise of the assembled residual,
/// i.e. the smallest residual sup-norm that is meaningful at this iterate.
fn gradient_residual_magnitude_into(u: &Field, out: &mut Vec<f64>) {
    let grid = u.grid();
    let vals = u.values();
    let dim = grid.dim();
    out.clear();
    out.resize(grid.node_count(), 0.0);
    for_each_edge(grid, |e| {
        let delta = (vals[e.b] - vals[e.a]) * e.inv_h;
        if e.exponent == 2.0 {
            let flux = (e.measure * delta * e.inv_h).abs();
            out[e.a] += flux;
            out[e.b] += flux;
        } else if dim == 1 {
            let flux = (e.measure * delta.abs().powf(e.exponent - 2.0) * delta * e.inv_h).abs();
            out[e.a] += flux;
            out[e.b] += flux;
        } else {
            let r = transverse_mean(vals, e);
            let g2 = delta * delta + r * r;
            if g2 > 0.0 {
                let coef = 0.5 * e.measure * g2.powf(0.5 * e.exponent - 1.0);
                let dflux = (coef * delta * e.inv_h).abs();
                out[e.a] += dflux;
                out[e.b] += dflux;
                let rflux = (coef * r * e.inv_ht / e.npairs as f64).abs();
                for k in 0..e.npairs {
                    let (hi, lo) = e.pairs[k];
                    out[hi] += rflux;
                    out[lo] += rflux;
                }
            }
        }
    });
}

/// Sup over interior nodes of the L1 magnitude of the terms summed by
/// [`residual`]. Multiplied by a few `f64::EPSILON` this is the attainable
/// accuracy floor of the residual at `u`: asking for less is asking the
/// assembly to out-resolve its own rounding.
pub fn residual_magnitude_scale(u: &Field, variant: &EnergyVariant) -> Result<f64, EnergyError> {
    let grid = u.grid();
    variant.check_grid(grid)?;
    let lambda = variant.lambda();
    let mut mag = Vec::new();
    gradient_residual_magnitude_into(u, &mut mag);
    let vals = u.values();
    let mut sup = 0.0f64;
    for &idx in grid.interior_nodes() {
        let load = (lambda * grid.node_measure(idx) * variant.source(grid, idx, vals[idx])).abs();
        sup = sup.max(mag[idx] + load);
    }
    Ok(sup)
}

/// [`residual_magnitude_scale`] for the auxiliary linear-load problem.
pub fn aux_residual_magnitude_scale(u: &Field, f: &Field) -> f64 {
    debug_assert!(u.grid().same_layout(f.grid()));
    let grid = u.grid();
    let mut mag = Vec::new();
    gradient_residual_magnitude_into(u, &mut mag);
    let mut sup = 0.0f64;
    for &idx in grid.interior_nodes() {
        sup = sup.max(mag[idx] + (grid.node_measure(idx) * f.get(idx)).abs());
    }
    sup
}

/// Default ε for the degenerate-edge regularization of [`jacobian`].
pub const DEFAULT_REG_EPS: f64 = 1e-8;

/// Regularized Hessian of [`energy`] on interior nodes.
pub fn jacobian(u: &Field, variant: &EnergyVariant, eps: f64) -> Result<SparseMatrix, EnergyError> {
    jacobian_impl(u, Some(variant), eps, 1.0)
}

/// Hessian of the gradient part alone (the auxiliary problem's Jacobian).
pub fn grad_hessian(u: &Field, eps: f64) -> SparseMatrix {
    jacobian_impl(u, None, eps, 1.0).expect("gradient part needs no variant")
}

/// Diagnostic hook for the self-check battery: assembles the Jacobian with
/// every exponent-p edge weight multiplied by `scale`, i.e. a deliberately
/// wrong discretization when `scale != 1`. Residuals are untouched, so the
/// derivative cross-check must flag the mismatch.
pub fn jacobian_with_p_weight_fault(
    u: &Field,
    variant: &EnergyVariant,
    eps: f64,
    scale: f64,
) -> Result<SparseMatrix, EnergyError> {
    jacobian_impl(u, Some(variant), eps, scale)
}

fn jacobian_impl(
    u: &Field,
    variant: Option<&EnergyVariant>,
    eps: f64,
    p_weight_scale: f64,
) -> Result<SparseMatrix, EnergyError> {
    let grid = u.grid();
    if let Some(v) = variant {
        v.check_grid(grid)?;
    }
    let vals = u.values();
    let dim = grid.dim();
    let slot = &grid.interior_slot;
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(6 * grid.node_count());
    let push = |trip: &mut Vec<(usize, usize, f64)>, a: usize, b: usize, v: f64| {
        let (sa, sb) = (slot[a], slot[b]);
        if sa != usize::MAX && sb != usize::MAX && v != 0.0 {
            trip.push((sa, sb, v));
        }
    };
    for_each_edge(grid, |e| {
        let delta = (vals[e.b] - vals[e.a]) * e.inv_h;
        if e.exponent == 2.0 || dim == 1 {
            let w = if e.exponent == 2.0 {
                1.0
            } else {
                p_weight_scale
                    * (e.exponent - 1.0)
                    * (delta * delta + eps * eps).powf(0.5 * e.exponent - 1.0)
            };
            let c = e.measure * w * e.inv_h * e.inv_h;
            push(&mut trip, e.a, e.a, c);
            push(&mut trip, e.b, e.b, c);
            push(&mut trip, e.a, e.b, -c);
            push(&mut trip, e.b, e.a, -c);
        } else {
            let r = transverse_mean(vals, e);
            let s2 = delta * delta + r * r + eps * eps;
            let c1 = p_weight_scale * 0.5 * e.measure * (e.exponent - 2.0) * s2.powf(0.5 * e.exponent - 2.0);
            let c2 = p_weight_scale * 0.5 * e.measure * s2.powf(0.5 * e.exponent - 1.0);
            // Per-node total derivative (dδ, dr) over the local stencil.
            let mut nodes: [usize; 6] = [usize::MAX; 6];
            let mut dd: [f64; 6] = [0.0; 6];
            let mut dr: [f64; 6] = [0.0; 6];
            let mut nn = 0usize;
            let acc = |nodes: &mut [usize; 6], dd: &mut [f64; 6], dr: &mut [f64; 6], nn: &mut usize, node: usize, d_delta: f64, d_r: f64| {
                for k in 0..*nn {
                    if nodes[k] == node {
                        dd[k] += d_delta;
                        dr[k] += d_r;
                        return;
                    }
                }
                nodes[*nn] = node;
                dd[*nn] = d_delta;
                dr[*nn] = d_r;
                *nn += 1;
            };
            acc(&mut nodes, &mut dd, &mut dr, &mut nn, e.a, -e.inv_h, 0.0);
            acc(&mut nodes, &mut dd, &mut dr, &mut nn, e.b, e.inv_h, 0.0);
            let cr = e.inv_ht / e.npairs as f64;
            for k in 0..e.npairs {
                let (hi, lo) = e.pairs[k];
                acc(&mut nodes, &mut dd, &mut dr, &mut nn, hi, 0.0, cr);
                acc(&mut nodes, &mut dd, &mut dr, &mut nn, lo, 0.0, -cr);
            }
            for a in 0..nn {
                let ga = delta * dd[a] + r * dr[a];
                for b in 0..nn {
                    let gb = delta * dd[b] + r * dr[b];
                    // (ga * gb) first: bitwise-symmetric under a <-> b.
                    let v = c1 * (ga * gb) + c2 * (dd[a] * dd[b] + dr[a] * dr[b]);
                    push(&mut trip, nodes[a], nodes[b], v);
                }
            }
        }
    });
    if let Some(v) = variant {
        let lambda = v.lambda();
        for &idx in grid.interior_nodes() {
            let d = -lambda * grid.node_measure(idx) * v.source_slope(grid, idx, vals[idx]);
            if d != 0.0 {
                trip.push((slot[idx], slot[idx], d));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(grid.interior_count(), &trip))
}

/// Constant-coefficient stiffness with every edge weight forced to 1 (the
/// exponent-2 operator on the same mesh). Used as a warm-start operator for
/// degenerate p-edges and as the diffusion matrix of the heat stepper.
pub fn hessian_all_two(grid: &Grid) -> SparseMatrix {
    let slot = &grid.interior_slot;
    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    let push = |trip: &mut Vec<(usize, usize, f64)>, a: usize, b: usize, v: f64| {
        let (sa, sb) = (slot[a], slot[b]);
        if sa != usize::MAX && sb != usize::MAX {
            trip.push((sa, sb, v));
        }
    };
    for_each_edge(grid, |e| {
        let c = e.measure * e.inv_h * e.inv_h;
        push(&mut trip, e.a, e.a, c);
        push(&mut trip, e.b, e.b, c);
        push(&mut trip, e.a, e.b, -c);
        push(&mut trip, e.b, e.a, -c);
    });
    SparseMatrix::from_triplets(grid.interior_count(), &trip)
}

/// Broken-norm report; `bracket` is exactly `grad_l2_d1 + grad_lp_d2`.
pub fn norms(u: &Field) -> NormReport {
    let grid = u.grid();
    let vals = u.values();
    let dim = grid.dim();
    let mut s2 = 0.0;
    let mut sp = 0.0;
    let p = grid.p();
    for_each_edge(grid, |e| {
        let delta = (vals[e.b] - vals[e.a]) * e.inv_h;
        if e.exponent == 2.0 {
            s2 += e.measure * delta * delta;
        } else if dim == 1 {
            sp += e.measure * delta.abs().powf(e.exponent);
        } else {
            let r = transverse_mean(vals, e);
            sp += 0.5 * e.measure * (delta * delta + r * r).powf(0.5 * e.exponent);
        }
    });
    let grad_l2_d1 = s2.sqrt();
    let grad_lp_d2 = if sp > 0.0 { sp.powf(1.0 / p) } else { 0.0 };
    NormReport {
        sup: u.sup_norm(),
        l2: u.l2_mu(),
        grad_l2_d1,
        grad_lp_d2,
        bracket: grad_l2_d1 + grad_lp_d2,
    }
}
