//! Aligned tensor-product grids and nodal fields.
//!
//! The continuous problem lives on an interval or axis-aligned rectangle Ω
//! with homogeneous Dirichlet data, carrying a strictly interior closed box
//! D₂ where diffusion degenerates to the p-Laplacian (p > 2); outside the box
//! the operator is the classical Laplacian. The discrete carrier for that
//! split is a per-edge exponent: an edge of the uniform grid gets exponent p
//! exactly when its midpoint lies in the closed box, exponent 2 otherwise.
//!
//! Grids are uniform per axis and *aligned*: the faces of D₂ land on grid
//! nodes, so every edge sits wholly on one side of the interface and the
//! interface itself is a set of nodes (`interface_nodes`). [`build_grid`]
//! snaps the spacing — never the outer box, never the region — to achieve
//! alignment when the requested resolution misses it.

use std::sync::Arc;
use thiserror::Error;

/// Relative tolerance (scaled by the box length) for deciding whether a
/// requested interface coordinate falls on a grid node.
const ALIGN_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("invalid exponents: need p > 2 and 1 < q < p - 1, got p = {p}, q = {q}")]
    BadExponents { p: f64, q: f64 },
    #[error("outer box is degenerate on axis {axis}: [{lo}, {hi}]")]
    BadBox { axis: usize, lo: f64, hi: f64 },
    #[error("inner region is inverted or degenerate on axis {axis}: [{lo}, {hi}]")]
    BadRegion { axis: usize, lo: f64, hi: f64 },
    #[error("inner region touches the outer boundary on axis {axis}; a positive margin is required")]
    TouchesBoundary { axis: usize },
    #[error("grid too coarse on axis {axis}: {found} nodes on the region closure, need at least 3")]
    TooCoarse { axis: usize, found: usize },
    #[error("cannot place the region face at {want} on a uniform grid near n = {n} (searched up to {m_max} intervals)")]
    NotAlignable { want: f64, n: usize, m_max: usize },
    #[error("n = {0} is too small (need n >= 5)")]
    TooFewNodes(usize),
    #[error("box [{lo:?}, {hi:?}] does not fit inside the grid")]
    BoxOutsideGrid { lo: [f64; 2], hi: [f64; 2] },
    #[error("requested box overlaps exponent-p edges; use restrict_to_d2 for the p-region")]
    BoxOverlapsPRegion,
    #[error("coordinate {0} is not finite")]
    NotFinite(f64),
}

/// Validated description of the continuous problem geometry and exponents.
///
/// Invariants enforced at construction: the outer box is nondegenerate, the
/// inner box is strictly interior on every axis, `p > 2` and `2 < q+1 < p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub dim: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub d2_lo: [f64; 2],
    pub d2_hi: [f64; 2],
    pub p: f64,
    pub q: f64,
}

impl DomainSpec {
    /// 1D problem on `(x.0, x.1)` with the p-region `[d2.0, d2.1]`.
    pub fn interval(x: (f64, f64), d2: (f64, f64), p: f64, q: f64) -> Result<Self, MeshError> {
        let spec = DomainSpec {
            dim: 1,
            lo: [x.0, 0.0],
            hi: [x.1, 1.0],
            d2_lo: [d2.0, 0.25],
            d2_hi: [d2.1, 0.75],
            p,
            q,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 2D problem on the square `(x.0, x.1)²` with the p-region `[d2.0, d2.1]²`.
    pub fn square(x: (f64, f64), d2: (f64, f64), p: f64, q: f64) -> Result<Self, MeshError> {
        Self::rectangle(x, x, d2, d2, p, q)
    }

    /// 2D problem on a rectangle with a per-axis inner box.
    pub fn rectangle(
        x: (f64, f64),
        y: (f64, f64),
        d2x: (f64, f64),
        d2y: (f64, f64),
        p: f64,
        q: f64,
    ) -> Result<Self, MeshError> {
        let spec = DomainSpec {
            dim: 2,
            lo: [x.0, y.0],
            hi: [x.1, y.1],
            d2_lo: [d2x.0, d2y.0],
            d2_hi: [d2x.1, d2y.1],
            p,
            q,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), MeshError> {
        if self.dim != 1 && self.dim != 2 {
            return Err(MeshError::BadDimension(self.dim));
        }
        if !(self.p > 2.0) || !(self.q > 1.0) || !(self.q + 1.0 < self.p) {
            return Err(MeshError::BadExponents { p: self.p, q: self.q });
        }
        for axis in 0..self.dim {
            let (lo, hi) = (self.lo[axis], self.hi[axis]);
            let (a, b) = (self.d2_lo[axis], self.d2_hi[axis]);
            for v in [lo, hi, a, b] {
                if !v.is_finite() {
                    return Err(MeshError::NotFinite(v));
                }
            }
            if !(lo < hi) {
                return Err(MeshError::BadBox { axis, lo, hi });
            }
            if !(a < b) {
                return Err(MeshError::BadRegion { axis, lo: a, hi: b });
            }
            if !(lo < a) || !(b < hi) {
                return Err(MeshError::TouchesBoundary { axis });
            }
        }
        Ok(())
    }
}

/// Where the exponent-p edges sit in a raw (non-snapping) grid build.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum D2Layout {
    /// Every edge is an exponent-2 edge (pure Laplacian grid).
    Empty,
    /// Every edge is an exponent-p edge (pure p-Laplacian grid).
    Full,
    /// Edges with midpoints inside the closed box get exponent p. The faces
    /// must already lie on nodes; this constructor does not snap.
    Box { lo: [f64; 2], hi: [f64; 2] },
}

/// Uniform aligned grid: node coordinates, per-edge exponents, node measures.
///
/// Nodes are stored row-major (`idx = j*n[0] + i`); in 1D `n[1] == 1` and the
/// second axis is inert. Boundary nodes carry Dirichlet data (always zero for
/// the fields in this crate) and are excluded from the interior index map used
/// by the linear algebra.
#[derive(Debug)]
pub struct Grid {
    pub(crate) dim: usize,
    pub(crate) n: [usize; 2],
    pub(crate) h: [f64; 2],
    pub(crate) origin: [f64; 2],
    /// Axis lengths; node coordinates are `origin + (i * extent) / (n - 1)`,
    /// which is exact at snapped faces and bitwise-stable under doubling.
    pub(crate) extent: [f64; 2],
    pub(crate) p: f64,
    pub(crate) q: f64,
    /// Snapped inner box, `None` when the grid has no exponent-p edge.
    pub(crate) d2: Option<[[f64; 2]; 2]>,
    /// Exponent per x-edge, indexed `j*(n0-1) + i`.
    pub(crate) exp_x: Vec<f64>,
    /// Exponent per y-edge, indexed `j*n0 + i` (empty in 1D).
    pub(crate) exp_y: Vec<f64>,
    /// Interior node indices in row-major order.
    pub(crate) interior: Vec<usize>,
    /// Node index -> slot in `interior`, `usize::MAX` for boundary nodes.
    pub(crate) interior_slot: Vec<usize>,
    /// Nodes lying on the faces of the inner box.
    pub(crate) interface: Vec<usize>,
}

/// Searches for the smallest uniform interval count `m >= m_req` putting both
/// region faces on nodes; returns `(m, ia, ib)` with face node indices.
fn align_axis(lo: f64, hi: f64, a: f64, b: f64, m_req: usize) -> Result<(usize, usize, usize), MeshError> {
    let len = hi - lo;
    let m_max = (10 * m_req).max(m_req + 1000);
    let tol = ALIGN_RTOL * len;
    for m in m_req..=m_max {
        let h = len / m as f64;
        let ia = ((a - lo) / h).round() as isize;
        let ib = ((b - lo) / h).round() as isize;
        if ia < 1 || ib >= m as isize || ib <= ia {
            continue;
        }
        let (ia, ib) = (ia as usize, ib as usize);
        let xa = lo + (ia as f64 * len) / m as f64;
        let xb = lo + (ib as f64 * len) / m as f64;
        if (xa - a).abs() <= tol && (xb - b).abs() <= tol {
            return Ok((m, ia, ib));
        }
    }
    Err(MeshError::NotAlignable { want: a, n: m_req + 1, m_max })
}

/// Builds the aligned grid for `spec` with (approximately) `n` nodes per axis.
///
/// The outer box endpoints are preserved exactly. If the requested spacing
/// does not put the inner-box faces on nodes, the interval count is increased
/// to the smallest aligned value; the resulting grid reports the adjusted `n`.
/// Rejects grids that leave fewer than 3 nodes on the region closure per axis.
pub fn build_grid(spec: &DomainSpec, n: usize) -> Result<Arc<Grid>, MeshError> {
    spec.validate()?;
    if n < 5 {
        return Err(MeshError::TooFewNodes(n));
    }
    let mut m = [1usize; 2];
    let mut face = [[0usize; 2]; 2];
    for axis in 0..spec.dim {
        let (mm, ia, ib) = align_axis(
            spec.lo[axis],
            spec.hi[axis],
            spec.d2_lo[axis],
            spec.d2_hi[axis],
            n - 1,
        )?;
        if ib - ia < 2 {
            return Err(MeshError::TooCoarse { axis, found: ib - ia + 1 });
        }
        m[axis] = mm;
        face[axis] = [ia, ib];
    }
    let mut nn = [1usize; 2];
    let mut h = [1.0f64; 2];
    let mut extent = [1.0f64; 2];
    let mut d2 = [[0.0f64; 2]; 2];
    for axis in 0..spec.dim {
        nn[axis] = m[axis] + 1;
        extent[axis] = spec.hi[axis] - spec.lo[axis];
        h[axis] = extent[axis] / m[axis] as f64;
        d2[axis] = [
            spec.lo[axis] + (face[axis][0] as f64 * extent[axis]) / m[axis] as f64,
            spec.lo[axis] + (face[axis][1] as f64 * extent[axis]) / m[axis] as f64,
        ];
    }
    if spec.dim == 1 {
        d2[1] = [f64::NEG_INFINITY, f64::INFINITY];
    }
    Ok(Arc::new(Grid::assemble(
        spec.dim,
        [spec.lo[0], spec.lo[1]],
        nn,
        h,
        extent,
        spec.p,
        spec.q,
        D2Layout::Box { lo: [d2[0][0], d2[1][0]], hi: [d2[0][1], d2[1][1]] },
    )))
}

impl Grid {
    /// Raw uniform grid without snapping. `D2Layout::Box` faces must already
    /// lie on nodes of the requested resolution. Exponent checks here are
    /// loose (`p >= 2`) so degenerate reduction grids can be built; the
    /// validated path is [`build_grid`].
    pub fn uniform(
        dim: usize,
        lo: [f64; 2],
        hi: [f64; 2],
        n: [usize; 2],
        p: f64,
        q: f64,
        layout: D2Layout,
    ) -> Result<Arc<Grid>, MeshError> {
        if dim != 1 && dim != 2 {
            return Err(MeshError::BadDimension(dim));
        }
        if !(p >= 2.0) || !(q > 0.0) {
            return Err(MeshError::BadExponents { p, q });
        }
        let mut nn = [1usize; 2];
        let mut h = [1.0f64; 2];
        let mut extent = [1.0f64; 2];
        for axis in 0..dim {
            if n[axis] < 3 {
                return Err(MeshError::TooFewNodes(n[axis]));
            }
            if !(lo[axis] < hi[axis]) {
                return Err(MeshError::BadBox { axis, lo: lo[axis], hi: hi[axis] });
            }
            nn[axis] = n[axis];
            extent[axis] = hi[axis] - lo[axis];
            h[axis] = extent[axis] / (n[axis] - 1) as f64;
        }
        if let D2Layout::Box { lo: bl, hi: bh } = layout {
            for axis in 0..dim {
                let tol = ALIGN_RTOL * extent[axis];
                let m = (n[axis] - 1) as f64;
                for v in [bl[axis], bh[axis]] {
                    let i = ((v - lo[axis]) / h[axis]).round();
                    if (lo[axis] + (i * extent[axis]) / m - v).abs() > tol {
                        return Err(MeshError::NotAlignable { want: v, n: n[axis], m_max: n[axis] - 1 });
                    }
                }
            }
        }
        Ok(Arc::new(Grid::assemble(dim, lo, nn, h, extent, p, q, layout)))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        dim: usize,
        origin: [f64; 2],
        n: [usize; 2],
        h: [f64; 2],
        extent: [f64; 2],
        p: f64,
        q: f64,
        layout: D2Layout,
    ) -> Grid {
        let (n0, n1) = (n[0], n[1]);
        let m0 = (n0 - 1) as f64;
        let m1 = if dim == 2 { (n1 - 1) as f64 } else { 1.0 };
        let in_d2 = |x: f64, y: f64| -> bool {
            match layout {
                D2Layout::Empty => false,
                D2Layout::Full => true,
                D2Layout::Box { lo, hi } => {
                    let tol0 = ALIGN_RTOL * h[0];
                    let mut inside = x >= lo[0] - tol0 && x <= hi[0] + tol0;
                    if dim == 2 {
                        let tol1 = ALIGN_RTOL * h[1];
                        inside = inside && y >= lo[1] - tol1 && y <= hi[1] + tol1;
                    }
                    inside
                }
            }
        };
        let xc = |i: usize| origin[0] + (i as f64 * extent[0]) / m0;
        let yc = |j: usize| if dim == 2 { origin[1] + (j as f64 * extent[1]) / m1 } else { 0.0 };

        let mut exp_x = Vec::with_capacity((n0 - 1) * n1);
        for j in 0..n1 {
            for i in 0..n0 - 1 {
                let mid = origin[0] + ((i as f64 + 0.5) * extent[0]) / m0;
                exp_x.push(if in_d2(mid, yc(j)) { p } else { 2.0 });
            }
        }
        let mut exp_y = Vec::new();
        if dim == 2 {
            exp_y.reserve(n0 * (n1 - 1));
            for j in 0..n1 - 1 {
                for i in 0..n0 {
                    let mid = origin[1] + ((j as f64 + 0.5) * extent[1]) / m1;
                    exp_y.push(if in_d2(xc(i), mid) { p } else { 2.0 });
                }
            }
        }

        let total = n0 * n1;
        let mut interior = Vec::new();
        let mut interior_slot = vec![usize::MAX; total];
        for j in 0..n1 {
            for i in 0..n0 {
                let bnd = i == 0 || i == n0 - 1 || (dim == 2 && (j == 0 || j == n1 - 1));
                if !bnd {
                    interior_slot[j * n0 + i] = interior.len();
                    interior.push(j * n0 + i);
                }
            }
        }

        let (d2, interface) = match layout {
            D2Layout::Empty => (None, Vec::new()),
            D2Layout::Full => {
                let mut hi = [origin[0] + extent[0], 0.0];
                let mut lo2 = [origin[0], 0.0];
                if dim == 2 {
                    lo2[1] = origin[1];
                    hi[1] = origin[1] + extent[1];
                }
                // The whole grid is the p-region; its interface is the outer boundary.
                let mut iface = Vec::new();
                for j in 0..n1 {
                    for i in 0..n0 {
                        if i == 0 || i == n0 - 1 || (dim == 2 && (j == 0 || j == n1 - 1)) {
                            iface.push(j * n0 + i);
                        }
                    }
                }
                (Some([[lo2[0], hi[0]], [lo2[1], hi[1]]]), iface)
            }
            D2Layout::Box { lo: bl, hi: bh } => {
                let mut iface = Vec::new();
                let tol0 = ALIGN_RTOL * h[0];
                let tol1 = ALIGN_RTOL * h[1];
                for j in 0..n1 {
                    for i in 0..n0 {
                        let (x, y) = (xc(i), yc(j));
                        let on_face_x = (x - bl[0]).abs() <= tol0 || (x - bh[0]).abs() <= tol0;
                        let within_x = x >= bl[0] - tol0 && x <= bh[0] + tol0;
                        if dim == 1 {
                            if on_face_x {
                                iface.push(i);
                            }
                        } else {
                            let on_face_y = (y - bl[1]).abs() <= tol1 || (y - bh[1]).abs() <= tol1;
                            let within_y = y >= bl[1] - tol1 && y <= bh[1] + tol1;
                            if (on_face_x && within_y) || (on_face_y && within_x) {
                                iface.push(j * n0 + i);
                            }
                        }
                    }
                }
                (Some([[bl[0], bh[0]], [bl[1], bh[1]]]), iface)
            }
        };

        Grid {
            dim,
            n,
            h,
            origin,
            extent,
            p,
            q,
            d2,
            exp_x,
            exp_y,
            interior,
            interior_slot,
            interface,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis (`[n, 1]` in 1D).
    pub fn shape(&self) -> [usize; 2] {
        self.n
    }

    pub fn node_count(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.h
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Snapped inner box as `[[a_x, b_x], [a_y, b_y]]`, if any p-edges exist.
    pub fn d2_box(&self) -> Option<[[f64; 2]; 2]> {
        self.d2
    }

    /// Node indices on the faces of the inner box.
    pub fn interface_nodes(&self) -> &[usize] {
        &self.interface
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    #[inline]
    pub(crate) fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let i = idx % self.n[0];
        let j = idx / self.n[0];
        [
            self.origin[0] + (i as f64 * self.extent[0]) / (self.n[0] - 1) as f64,
            if self.dim == 2 {
                self.origin[1] + (j as f64 * self.extent[1]) / (self.n[1] - 1) as f64
            } else {
                0.0
            },
        ]
    }

    #[inline]
    pub fn is_boundary(&self, idx: usize) -> bool {
        self.interior_slot[idx] == usize::MAX
    }

    /// Lumped quadrature weight of a node: the product over axes of `h`
    /// (interior) or `h/2` (axis endpoint).
    #[inline]
    pub fn node_measure(&self, idx: usize) -> f64 {
        let i = idx % self.n[0];
        let j = idx / self.n[0];
        let wx = if i == 0 || i == self.n[0] - 1 { 0.5 * self.h[0] } else { self.h[0] };
        if self.dim == 1 {
            wx
        } else {
            let wy = if j == 0 || j == self.n[1] - 1 { 0.5 * self.h[1] } else { self.h[1] };
            wx * wy
        }
    }

    pub fn p_edge_count(&self) -> usize {
        self.exp_x.iter().chain(self.exp_y.iter()).filter(|&&e| e != 2.0).count()
    }

    /// Exponent of the x-edge starting at `(i, j)`.
    pub fn x_edge_exponent(&self, i: usize, j: usize) -> f64 {
        self.exp_x[j * (self.n[0] - 1) + i]
    }

    /// True when both grids describe the same node layout and exponents.
    pub fn same_layout(&self, other: &Grid) -> bool {
        self.dim == other.dim
            && self.n == other.n
            && self.h == other.h
            && self.origin == other.origin
            && self.p == other.p
            && self.q == other.q
            && self.exp_x == other.exp_x
            && self.exp_y == other.exp_y
    }

    /// Restriction to the inner box as a standalone all-p Dirichlet grid.
    pub fn restrict_to_d2(self: &Arc<Self>) -> Result<Subdomain, MeshError> {
        let d2 = self.d2.ok_or(MeshError::BoxOutsideGrid {
            lo: [f64::NAN, f64::NAN],
            hi: [f64::NAN, f64::NAN],
        })?;
        let mut lo = [d2[0][0], 0.0];
        let mut hi = [d2[0][1], 1.0];
        if self.dim == 2 {
            lo[1] = d2[1][0];
            hi[1] = d2[1][1];
        }
        self.restrict(lo, hi, D2Layout::Full)
    }

    /// Restriction to a node-aligned sub-box that must avoid all p-edges
    /// (the inner faces are snapped to the nearest nodes). The restricted
    /// grid imposes zero Dirichlet data on the sub-box boundary.
    pub fn restrict_to_box(self: &Arc<Self>, lo: [f64; 2], hi: [f64; 2]) -> Result<Subdomain, MeshError> {
        let sub = self.restrict(lo, hi, D2Layout::Empty)?;
        let off = sub.offset;
        let sn = sub.grid.n;
        for j in 0..sn[1] {
            for i in 0..sn[0] - 1 {
                if self.x_edge_exponent(off[0] + i, off[1] + j) != 2.0 {
                    return Err(MeshError::BoxOverlapsPRegion);
                }
            }
        }
        if self.dim == 2 {
            for j in 0..sn[1] - 1 {
                for i in 0..sn[0] {
                    if self.exp_y[(off[1] + j) * self.n[0] + off[0] + i] != 2.0 {
                        return Err(MeshError::BoxOverlapsPRegion);
                    }
                }
            }
        }
        Ok(sub)
    }

    fn restrict(self: &Arc<Self>, lo: [f64; 2], hi: [f64; 2], layout: D2Layout) -> Result<Subdomain, MeshError> {
        let mut idx_lo = [0usize; 2];
        let mut idx_hi = [0usize; 2];
        let mut nn = [1usize; 2];
        let mut slo = [0.0f64; 2];
        let mut shi = [0.0f64; 2];
        for axis in 0..self.dim {
            let fi = ((lo[axis] - self.origin[axis]) / self.h[axis]).round();
            let gi = ((hi[axis] - self.origin[axis]) / self.h[axis]).round();
            if fi < 0.0 || gi > (self.n[axis] - 1) as f64 || gi - fi < 2.0 {
                return Err(MeshError::BoxOutsideGrid { lo, hi });
            }
            idx_lo[axis] = fi as usize;
            idx_hi[axis] = gi as usize;
            nn[axis] = idx_hi[axis] - idx_lo[axis] + 1;
            let m = (self.n[axis] - 1) as f64;
            slo[axis] = self.origin[axis] + (fi * self.extent[axis]) / m;
            shi[axis] = self.origin[axis] + (gi * self.extent[axis]) / m;
        }
        if self.dim == 1 {
            slo[1] = 0.0;
            shi[1] = 1.0;
        }
        let grid = Grid::uniform(self.dim, slo, shi, nn, self.p, self.q, layout)?;
        Ok(Subdomain { grid, parent: Arc::clone(self), offset: idx_lo })
    }
}

/// A node-aligned sub-box of a parent grid, with transfer operators.
#[derive(Debug, Clone)]
pub struct Subdomain {
    pub grid: Arc<Grid>,
    parent: Arc<Grid>,
    offset: [usize; 2],
}

impl Subdomain {
    pub fn parent(&self) -> &Arc<Grid> {
        &self.parent
    }

    /// Copies the parent-field values at the sub-box nodes.
    pub fn extract(&self, parent_field: &Field) -> Field {
        assert!(parent_field.grid.same_layout(&self.parent), "field lives on a different grid");
        let mut out = Field::zero(&self.grid);
        let sn = self.grid.n;
        for j in 0..sn[1] {
            for i in 0..sn[0] {
                let pidx = self.parent.node_index(self.offset[0] + i, self.offset[1] + j);
                out.values[j * sn[0] + i] = parent_field.values[pidx];
            }
        }
        out
    }

    /// Embeds a sub-box field into the parent grid, zero outside the box.
    pub fn extend_by_zero(&self, sub: &Field) -> Field {
        assert!(sub.grid.same_layout(&self.grid), "field lives on a different grid");
        let mut out = Field::zero(&self.parent);
        let sn = self.grid.n;
        for j in 0..sn[1] {
            for i in 0..sn[0] {
                let pidx = self.parent.node_index(self.offset[0] + i, self.offset[1] + j);
                out.values[pidx] = sub.values[j * sn[0] + i];
            }
        }
        out
    }
}

/// Nodal scalar field with zero Dirichlet trace on its grid's boundary.
#[derive(Clone)]
pub struct Field {
    pub(crate) grid: Arc<Grid>,
    pub(crate) values: Vec<f64>,
}

// Fields ride inside solver errors; a full nodal dump would swamp every
// error message, so print only the shape and magnitude.
impl std::fmt::Debug for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Field")
            .field("dim", &self.grid.dim)
            .field("n", &self.grid.n)
            .field("sup", &self.sup_norm())
            .finish_non_exhaustive()
    }
}

impl Field {
    pub fn zero(grid: &Arc<Grid>) -> Field {
        Field { grid: Arc::clone(grid), values: vec![0.0; grid.node_count()] }
    }

    /// Constant `c` at interior nodes, zero on the boundary.
    pub fn constant(grid: &Arc<Grid>, c: f64) -> Field {
        let mut f = Field::zero(grid);
        for &idx in &grid.interior {
            f.values[idx] = c;
        }
        f
    }

    /// Samples `f(x, y)` at interior nodes (boundary stays zero).
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut([f64; 2]) -> f64) -> Field {
        let mut out = Field::zero(grid);
        for &idx in &grid.interior {
            out.values[idx] = f(grid.coords(idx));
        }
        out
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Sets an interior node value (boundary writes are rejected to keep the
    /// zero trace intact).
    pub fn set(&mut self, idx: usize, v: f64) {
        assert!(!self.grid.is_boundary(idx), "cannot write a Dirichlet boundary node");
        self.values[idx] = v;
    }

    // The norms fold with an explicit NaN branch: `f64::max`/`min` silently
    // drop NaN arguments, which would let a poisoned field report a tiny norm
    // and pass convergence checks instead of failing loudly downstream.

    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .fold(0.0, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v.abs()) })
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        debug_assert!(self.grid.same_layout(&other.grid));
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| {
            let d = (a - b).abs();
            if d.is_nan() || m.is_nan() {
                f64::NAN
            } else {
                m.max(d)
            }
        })
    }

    pub fn min_interior(&self) -> f64 {
        self.grid
            .interior
            .iter()
            .map(|&i| self.values[i])
            .fold(f64::INFINITY, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.min(v) })
    }

    /// `self + c * other`, interior nodes only.
    pub fn add_scaled(&mut self, c: f64, other: &Field) {
        debug_assert!(self.grid.same_layout(&other.grid));
        let grid = Arc::clone(&self.grid);
        for &idx in &grid.interior {
            self.values[idx] += c * other.values[idx];
        }
    }

    /// Interior values packed in interior-slot order (the linear-algebra dof
    /// vector).
    pub fn interior_vec(&self) -> Vec<f64> {
        self.grid.interior.iter().map(|&idx| self.values[idx]).collect()
    }

    /// Inverse of [`Field::interior_vec`]: boundary nodes stay zero.
    pub fn from_interior(grid: &Arc<Grid>, dof: &[f64]) -> Field {
        assert_eq!(dof.len(), grid.interior.len(), "dof vector length mismatch");
        let mut out = Field::zero(grid);
        for (k, &idx) in grid.interior.iter().enumerate() {
            out.values[idx] = dof[k];
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Field {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    /// Applies `f` to every interior value in place.
    pub fn map_interior(&mut self, f: impl Fn(f64) -> f64) {
        for k in 0..self.grid.interior.len() {
            let idx = self.grid.interior[k];
            self.values[idx] = f(self.values[idx]);
        }
    }

    /// Linear interpolation `(1-t)*self + t*other`.
    pub fn lerp(&self, other: &Field, t: f64) -> Field {
        debug_assert!(self.grid.same_layout(&other.grid));
        let mut out = Field::zero(&self.grid);
        for (o, (a, b)) in out.values.iter_mut().zip(self.values.iter().zip(&other.values)) {
            *o = (1.0 - t) * a + t * b;
        }
        out
    }

    /// Discrete L² norm with the lumped node measure.
    pub fn l2_mu(&self) -> f64 {
        let mut s = 0.0;
        for (idx, v) in self.values.iter().enumerate() {
            s += self.grid.node_measure(idx) * v * v;
        }
        s.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_default() -> DomainSpec {
        DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).unwrap()
    }

    #[test]
    fn aligned_request_keeps_spacing() {
        let g = build_grid(&spec_default(), 11).unwrap();
        assert_eq!(g.shape(), [11, 1]);
        assert!((g.spacing()[0] - 0.1).abs() < 1e-15);
        // Exactly the two edges inside [0.4, 0.6] carry exponent p.
        assert_eq!(g.p_edge_count(), 2);
        assert_eq!(g.x_edge_exponent(4, 0), 3.0);
        assert_eq!(g.x_edge_exponent(5, 0), 3.0);
        assert_eq!(g.x_edge_exponent(3, 0), 2.0);
        let iface: Vec<f64> = g.interface_nodes().iter().map(|&i| g.coords(i)[0]).collect();
        assert_eq!(iface, vec![0.4, 0.6]);
    }

    #[test]
    fn misaligned_request_snaps_spacing_not_region() {
        // n = 10 puts nodes at multiples of 1/9; 0.4 and 0.6 are not among them.
        let g = build_grid(&spec_default(), 10).unwrap();
        let d2 = g.d2_box().unwrap();
        assert_eq!(d2[0], [0.4, 0.6]);
        assert_eq!(g.shape()[0], 11); // smallest aligned refinement
        let xs: Vec<f64> = (0..g.node_count()).map(|i| g.coords(i)[0]).collect();
        assert!(xs.contains(&0.4));
        assert!(xs.contains(&0.6));
        assert_eq!(xs[0], 0.0);
        assert_eq!(*xs.last().unwrap(), 1.0);
    }

    #[test]
    fn region_touching_boundary_rejected() {
        let err = DomainSpec::interval((0.0, 1.0), (0.0, 0.5), 3.0, 1.5).unwrap_err();
        assert!(matches!(err, MeshError::TouchesBoundary { .. }));
    }

    #[test]
    fn too_coarse_region_rejected() {
        // n = 5 aligns at m = 5 but leaves only 2 nodes on [0.4, 0.6].
        let err = build_grid(&spec_default(), 5).unwrap_err();
        assert!(matches!(err, MeshError::TooCoarse { .. }));
    }

    #[test]
    fn exponent_constraints_rejected() {
        assert!(DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 2.0, 1.5).is_err());
        assert!(DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 2.4, 1.5).is_err());
        assert!(DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 3.0, 0.9).is_err());
        assert!(DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 3.0, 2.0).is_err());
    }

    #[test]
    fn refinement_keeps_interface_coordinates() {
        let spec = spec_default();
        let coarse = build_grid(&spec, 11).unwrap();
        let n = coarse.shape()[0];
        let fine = build_grid(&spec, 2 * n - 1).unwrap();
        let ci: Vec<f64> = coarse.interface_nodes().iter().map(|&i| coarse.coords(i)[0]).collect();
        let fi: Vec<f64> = fine.interface_nodes().iter().map(|&i| fine.coords(i)[0]).collect();
        assert_eq!(ci, fi); // bitwise equality
        assert_eq!(fine.spacing()[0], coarse.spacing()[0] / 2.0);
    }

    #[test]
    fn constant_field_has_zero_trace() {
        let g = build_grid(&spec_default(), 11).unwrap();
        let f = Field::constant(&g, 2.5);
        assert_eq!(f.get(0), 0.0);
        assert_eq!(f.get(10), 0.0);
        assert_eq!(f.get(5), 2.5);
    }

    #[test]
    fn node_measures_tile_the_domain() {
        for n in [11, 21] {
            let g = build_grid(&spec_default(), n).unwrap();
            let total: f64 = (0..g.node_count()).map(|i| g.node_measure(i)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let spec2 = DomainSpec::square((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).unwrap();
        let g2 = build_grid(&spec2, 11).unwrap();
        let total: f64 = (0..g2.node_count()).map(|i| g2.node_measure(i)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_dim_edge_classification() {
        let spec = DomainSpec::square((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).unwrap();
        let g = build_grid(&spec, 11).unwrap();
        // x-edges inside the closed box: rows y in {0.4, 0.5, 0.6}, i in {4, 5}.
        assert_eq!(g.p_edge_count(), 2 * 2 * 3); // both orientations
        let iface = g.interface_nodes();
        assert_eq!(iface.len(), 8); // ring of the 3x3 node box
        for &idx in iface {
            let [x, y] = g.coords(idx);
            let on_x = x == 0.4 || x == 0.6;
            let on_y = y == 0.4 || y == 0.6;
            assert!(on_x || on_y);
        }
    }

    #[test]
    fn d2_restriction_is_all_p() {
        let g = build_grid(&spec_default(), 201).unwrap();
        let sub = g.restrict_to_d2().unwrap();
        assert_eq!(sub.grid.shape()[0], 41);
        assert_eq!(sub.grid.p_edge_count(), 40);
        let f = Field::from_fn(&sub.grid, |x| x[0]);
        let big = sub.extend_by_zero(&f);
        assert_eq!(big.get(0), 0.0);
        let back = sub.extract(&big);
        assert_eq!(back.values(), f.values());
    }

    #[test]
    fn box_restriction_rejects_p_overlap() {
        let g = build_grid(&spec_default(), 201).unwrap();
        assert!(g.restrict_to_box([0.05, 0.0], [0.35, 1.0]).is_ok());
        let err = g.restrict_to_box([0.3, 0.0], [0.5, 1.0]).unwrap_err();
        assert!(matches!(err, MeshError::BoxOverlapsPRegion));
    }
}
