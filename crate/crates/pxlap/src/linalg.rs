//! Small symmetric sparse kernel backing the Newton solvers.
//!
//! Everything here is deliberately self-contained: the Jacobians are
//! tridiagonal in 1D (solved directly with partial pivoting) and short-stencil
//! sparse in 2D (solved with diagonally scaled MINRES, which also covers the
//! symmetric-indefinite systems arising at saddle points). All routines are
//! pure functions of their inputs and safe to call from worker threads.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is numerically singular at pivot {0}")]
    Singular(usize),
    #[error("iterative solve stagnated (recurrence breakdown), residual {0:e}")]
    Breakdown(f64),
    #[error("iterative solve did not reach tolerance: residual {residual:e} after {iters} iterations")]
    NotConverged { residual: f64, iters: usize },
}

/// Compressed sparse rows, symmetric by construction of its assemblers.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    /// Position of the diagonal entry of each row in `vals`.
    diag_pos: Vec<usize>,
}

impl SparseMatrix {
    /// Assembles from (row, col, value) triplets; duplicates are summed and a
    /// diagonal slot is guaranteed for every row.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> SparseMatrix {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len() + n);
        entries.extend_from_slice(triplets);
        for i in 0..n {
            entries.push((i, i, 0.0));
        }
        entries.sort_by_key(|e| (e.0, e.1)); // stable: keeps duplicate accumulation order deterministic

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        let mut k = 0;
        for row in 0..n {
            while k < entries.len() && entries[k].0 == row {
                let col = entries[k].1;
                let mut v = entries[k].2;
                k += 1;
                while k < entries.len() && entries[k].0 == row && entries[k].1 == col {
                    v += entries[k].2;
                    k += 1;
                }
                col_idx.push(col);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        let mut diag_pos = vec![usize::MAX; n];
        for row in 0..n {
            for p in row_ptr[row]..row_ptr[row + 1] {
                if col_idx[p] == row {
                    diag_pos[row] = p;
                }
            }
        }
        SparseMatrix { n, row_ptr, col_idx, vals, diag_pos }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for row in 0..self.n {
            let mut s = 0.0;
            for p in self.row_ptr[row]..self.row_ptr[row + 1] {
                s += self.vals[p] * x[self.col_idx[p]];
            }
            y[row] = s;
        }
        y
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.vals[self.diag_pos[i]]).collect()
    }

    /// Adds `sigma` to every diagonal entry in place.
    pub fn shift_diag(&mut self, sigma: f64) {
        for i in 0..self.n {
            self.vals[self.diag_pos[i]] += sigma;
        }
    }

    /// Adds `sigma[i]` to the `i`-th diagonal entry in place.
    pub fn shift_diag_by(&mut self, sigma: &[f64]) {
        debug_assert_eq!(sigma.len(), self.n);
        for i in 0..self.n {
            self.vals[self.diag_pos[i]] += sigma[i];
        }
    }

    /// Multiplies every entry by `c` in place.
    pub fn scale(&mut self, c: f64) {
        for v in &mut self.vals {
            *v *= c;
        }
    }

    /// Largest asymmetry `|a_ij - a_ji|` over the stored pattern.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for row in 0..self.n {
            for p in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[p];
                let mirrored = self.get(col, row);
                worst = worst.max((self.vals[p] - mirrored).abs());
            }
        }
        worst
    }

    fn get(&self, row: usize, col: usize) -> f64 {
        for p in self.row_ptr[row]..self.row_ptr[row + 1] {
            if self.col_idx[p] == col {
                return self.vals[p];
            }
        }
        0.0
    }

    pub fn is_tridiagonal(&self) -> bool {
        for row in 0..self.n {
            for p in self.row_ptr[row]..self.row_ptr[row + 1] {
                if self.col_idx[p].abs_diff(row) > 1 {
                    return false;
                }
            }
        }
        true
    }

    /// Solves `A x = b`: direct banded LU when tridiagonal, otherwise
    /// diagonally scaled MINRES (handles symmetric indefinite systems).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.solve_with(b, 1e-13, 20 * self.n.max(50))
    }

    pub fn solve_with(&self, b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>, LinalgError> {
        if self.n == 0 {
            return Ok(Vec::new());
        }
        if self.is_tridiagonal() {
            self.solve_tridiag(b)
        } else {
            self.solve_minres(b, rtol, max_iter)
        }
    }

    /// Banded LU with partial pivoting; exact up to round-off, no definiteness
    /// assumption.
    fn solve_tridiag(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.n;
        let mut d = vec![0.0; n]; // main diagonal
        let mut e = vec![0.0; n]; // first superdiagonal
        let mut f = vec![0.0; n]; // pivoting fill-in (second superdiagonal)
        let mut sub = vec![0.0; n]; // subdiagonal, sub[k] = A[k][k-1]
        for row in 0..n {
            for p in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[p];
                if col == row {
                    d[row] = self.vals[p];
                } else if col == row + 1 {
                    e[row] = self.vals[p];
                } else if col + 1 == row {
                    sub[row] = self.vals[p];
                }
            }
        }
        let mut x = b.to_vec();
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for k in 0..n - 1 {
            let below = sub[k + 1];
            if below.abs() > d[k].abs() {
                // Swap rows k and k+1.
                let (dk, ek, fk) = (d[k], e[k], f[k]);
                d[k] = below;
                e[k] = d[k + 1];
                f[k] = e[k + 1];
                d[k + 1] = ek;
                e[k + 1] = fk;
                // Row k originally had no entry two to the right of column k
                // beyond f[k]; after the swap the eliminated row keeps (dk).
                x.swap(k, k + 1);
                if d[k].abs() <= 1e-300 * scale {
                    return Err(LinalgError::Singular(k));
                }
                let m = dk / d[k];
                d[k + 1] -= m * e[k];
                e[k + 1] -= m * f[k];
                x[k + 1] -= m * x[k];
            } else {
                if d[k].abs() <= 1e-300 * scale {
                    return Err(LinalgError::Singular(k));
                }
                let m = below / d[k];
                d[k + 1] -= m * e[k];
                e[k + 1] -= m * f[k];
                x[k + 1] -= m * x[k];
            }
        }
        if d[n - 1].abs() <= 1e-300 * scale {
            return Err(LinalgError::Singular(n - 1));
        }
        x[n - 1] /= d[n - 1];
        if n >= 2 {
            x[n - 2] = (x[n - 2] - e[n - 2] * x[n - 1]) / d[n - 2];
        }
        for k in (0..n.saturating_sub(2)).rev() {
            x[k] = (x[k] - e[k] * x[k + 1] - f[k] * x[k + 2]) / d[k];
        }
        Ok(x)
    }

    fn solve_minres(&self, b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>, LinalgError> {
        // Symmetric diagonal scaling keeps the operator symmetric while taming
        // the wildly different edge weights on mixed grids.
        let scale: Vec<f64> = self
            .diag()
            .iter()
            .map(|d| 1.0 / d.abs().max(1e-30).sqrt())
            .collect();
        let bs: Vec<f64> = b.iter().zip(&scale).map(|(v, s)| v * s).collect();
        let apply = |x: &[f64]| -> Vec<f64> {
            let xs: Vec<f64> = x.iter().zip(&scale).map(|(v, s)| v * s).collect();
            let mut y = self.matvec(&xs);
            for (v, s) in y.iter_mut().zip(&scale) {
                *v *= s;
            }
            y
        };
        let xs = minres(&apply, &bs, rtol, max_iter)?;
        Ok(xs.iter().zip(&scale).map(|(v, s)| v * s).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// MINRES for symmetric (possibly indefinite) operators, two-term
/// conjugate-residual recurrence with re-orthogonalization against the two
/// previous directions.
fn minres(apply: &dyn Fn(&[f64]) -> Vec<f64>, b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>, LinalgError> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let tol = rtol * bnorm;
    let mut r = b.to_vec();
    let mut p0 = r.clone();
    let mut s0 = apply(&p0);
    let mut p1 = p0.clone();
    let mut s1 = s0.clone();
    let mut best = x.clone();
    let mut best_res = bnorm;
    for k in 0..max_iter {
        let p2 = p1.clone();
        let s2 = s1.clone();
        p1 = p0.clone();
        s1 = s0.clone();
        let ss = dot(&s1, &s1);
        if !ss.is_finite() || ss <= 1e-300 * bnorm * bnorm {
            return Err(LinalgError::Breakdown(norm(&r) / bnorm));
        }
        let alpha = dot(&r, &s1) / ss;
        for i in 0..n {
            x[i] += alpha * p1[i];
            r[i] -= alpha * s1[i];
        }
        let rn = norm(&r);
        if rn < best_res {
            best_res = rn;
            best.copy_from_slice(&x);
        }
        if rn <= tol {
            return Ok(x);
        }
        p0 = s1.clone();
        s0 = apply(&s1);
        let beta1 = dot(&s0, &s1) / ss;
        for i in 0..n {
            p0[i] -= beta1 * p1[i];
            s0[i] -= beta1 * s1[i];
        }
        if k > 0 {
            let s2s2 = dot(&s2, &s2);
            if s2s2 > 0.0 {
                let beta2 = dot(&s0, &s2) / s2s2;
                for i in 0..n {
                    p0[i] -= beta2 * p2[i];
                    s0[i] -= beta2 * s2[i];
                }
            }
        }
    }
    if best_res <= tol * 100.0 {
        // Close enough that the Newton line search can still make progress.
        return Ok(best);
    }
    Err(LinalgError::NotConverged { residual: best_res / bnorm, iters: max_iter })
}

/// Smallest eigenpair of the generalized problem `K x = lambda * diag(mass) x`
/// by inverse power iteration; `K` must be positive definite.
pub fn principal_eigenpair(k: &SparseMatrix, mass: &[f64]) -> Result<(f64, Vec<f64>), LinalgError> {
    let n = k.size();
    assert_eq!(mass.len(), n);
    let mut x = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..400 {
        let mx: Vec<f64> = x.iter().zip(mass).map(|(v, m)| v * m).collect();
        let y = k.solve(&mx)?;
        let ynorm = norm(&y);
        if ynorm == 0.0 {
            return Err(LinalgError::Breakdown(0.0));
        }
        x = y.iter().map(|v| v / ynorm).collect();
        let kx = k.matvec(&x);
        let num = dot(&x, &kx);
        let den: f64 = x.iter().zip(mass).map(|(v, m)| v * v * m).sum();
        let next = num / den;
        if (next - lambda).abs() <= 1e-13 * next.abs() {
            return Ok((next, x));
        }
        lambda = next;
    }
    Ok((lambda, x))
}
