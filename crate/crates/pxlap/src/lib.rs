//! Finite-difference study of a concave–convex reaction problem with mixed
//! diffusion: the classical Laplacian away from an interior subregion, a
//! degenerate p-Laplacian (p > 2) on it, coupled to the sublinear-at-zero,
//! superlinear-at-infinity source `λ u^q` with `1 < q < p - 1` and zero
//! Dirichlet data.
//!
//! The crate is organised as
//!
//! * [`mesh`] — aligned tensor-product grids, the exponent map on edges, and
//!   nodal fields with zero trace;
//! * [`energy`] — the discrete functionals (plain, positive-part, and two
//!   truncated flavours), their exact gradients and regularized Hessians, and
//!   broken-norm reports;
//! * [`linalg`] — the small sparse toolkit the solvers need (CSR symmetric
//!   matrices, a banded direct solve, MINRES, inverse power iteration);
//! * [`solvers`] — damped Newton, the monotone iteration driven by the
//!   auxiliary linear-load problem, truncated minimization, a mountain-pass
//!   path search, and a semi-implicit heat stepper for the blow-up probe;
//! * [`branches`] — the extinction threshold `λ*`, two-branch continuation
//!   scans, and the self-check battery behind `pxlap verify`.
//!
//! Everything is deterministic: random directions come from seeded ChaCha
//! streams and the parallel scan (see [`par`]) preserves input order.

// Guards are written `!(x > y)` on purpose: unlike `x <= y`, the negated form
// also rejects NaN, and tolerances/couplings arriving as NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod branches;
pub mod energy;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod solvers;

pub use energy::{energy, norms, residual, EnergyVariant, NormReport};
pub use mesh::{build_grid, DomainSpec, Field, Grid};

/// Library version, echoed into run manifests by front ends.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
