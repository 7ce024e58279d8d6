//! Compressed sparse row operators, Jacobi-preconditioned conjugate
//! gradients, and a dense direct solve used as a test oracle.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("malformed sparse structure: {0}")]
    Structure(String),
    #[error("operator is not flagged symmetric; conjugate gradients require a symmetric operator")]
    NotSymmetric,
    #[error(
        "operator is not positive definite (curvature {curvature:e} at iteration {iteration})"
    )]
    NotPositiveDefinite { iteration: usize, curvature: f64 },
    #[error("numerical breakdown: non-finite value at iteration {iteration}")]
    Breakdown { iteration: usize },
    #[error("matrix is singular to working precision")]
    Singular,
}

/// Minimal operator interface for the iterative solver.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `y ← A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Diagonal of `A`, used for Jacobi preconditioning.
    fn diagonal(&self) -> Vec<f64>;

    fn is_symmetric(&self) -> bool {
        true
    }
}

/// Sparse matrix in CSR form. Column indices are strictly increasing within
/// each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    pub fn from_csr(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, LinalgError> {
        if row_offsets.len() != nrows + 1 || row_offsets[0] != 0 {
            return Err(LinalgError::Structure(
                "row offsets must have nrows + 1 entries starting at 0".into(),
            ));
        }
        if col_indices.len() != values.len() || *row_offsets.last().unwrap() != values.len() {
            return Err(LinalgError::Structure(
                "offset/index/value lengths disagree".into(),
            ));
        }
        for r in 0..nrows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(LinalgError::Structure(format!(
                    "row {r} has decreasing offsets"
                )));
            }
            let row = &col_indices[lo..hi];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(LinalgError::Structure(format!(
                    "row {r} columns not strictly increasing"
                )));
            }
            if row.last().is_some_and(|&c| c >= ncols) {
                return Err(LinalgError::Structure(format!(
                    "row {r} column out of range"
                )));
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
            symmetric: false,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed in
    /// input order.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self, LinalgError> {
        if triplets.iter().any(|&(r, c, _)| r >= nrows || c >= ncols) {
            return Err(LinalgError::Structure("triplet index out of range".into()));
        }
        // stable: duplicates keep their insertion order
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut offsets = vec![0usize; nrows + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            offsets[r + 1] += offsets[r];
        }
        Self::from_csr(nrows, ncols, offsets, cols, vals)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    /// Copies the nonzero entries of a dense matrix.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                if a[(r, c)] != 0.0 {
                    cols.push(c);
                    vals.push(a[(r, c)]);
                }
            }
            offsets.push(cols.len());
        }
        Self {
            nrows: a.nrows(),
            ncols: a.ncols(),
            row_offsets: offsets,
            col_indices: cols,
            values: vals,
            symmetric: false,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out[(r, c)] += v;
            }
        }
        out
    }

    /// Sets the symmetry flag after verifying `A = Aᵀ` entrywise.
    pub fn into_symmetric(mut self) -> Result<Self, LinalgError> {
        if !self.is_structurally_symmetric() {
            return Err(LinalgError::NotSymmetric);
        }
        self.symmetric = true;
        Ok(self)
    }

    fn is_structurally_symmetric(&self) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        (0..self.nrows).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v))
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        match self.col_indices[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.ncols {
            return Err(LinalgError::Dimension {
                expected: self.ncols,
                actual: x.len(),
            });
        }
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// `y ← A x`, accumulated left to right along each row.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yr = acc;
        }
    }

    /// `y ← Aᵀ x`, scattered in row order.
    pub fn spmv_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            for k in lo..hi {
                y[self.col_indices[k]] += self.values[k] * xr;
            }
        }
    }

    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.nrows {
            return Err(LinalgError::Dimension {
                expected: self.nrows,
                actual: x.len(),
            });
        }
        let mut y = vec![0.0; self.ncols];
        self.spmv_transpose_into(x, &mut y);
        Ok(y)
    }

    /// Symmetric product `Aᵀ diag(w) A`, with the symmetry flag set.
    pub fn weighted_normal(&self, weights: &[f64]) -> SparseOperator {
        assert_eq!(weights.len(), self.nrows, "one weight per row");
        let mut triplets = Vec::new();
        for (r, &w) in weights.iter().enumerate() {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            for a in lo..hi {
                let wa = w * self.values[a];
                for b in lo..hi {
                    triplets.push((
                        self.col_indices[a],
                        self.col_indices[b],
                        wa * self.values[b],
                    ));
                }
            }
        }
        let mut out =
            Self::from_triplets(self.ncols, self.ncols, triplets).expect("indices in range");
        // Aᵀ W A is symmetric up to the order of accumulation; copy the
        // upper triangle onto the lower one so the flag holds exactly.
        for r in 0..out.nrows {
            let (lo, hi) = (out.row_offsets[r], out.row_offsets[r + 1]);
            for k in lo..hi {
                let c = out.col_indices[k];
                if c < r {
                    out.values[k] = out.get(c, r);
                }
            }
        }
        out.symmetric = true;
        out
    }

    /// Sum of squares of each column, weighted by `weights` per row: the
    /// diagonal of `Aᵀ diag(w) A`.
    pub fn weighted_column_norms(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, &w) in weights.iter().enumerate() {
            for (c, v) in self.row(r) {
                out[c] += w * v * v;
            }
        }
        out
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.spmv_into(x, y)
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|r| self.get(r, r))
            .collect()
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final `‖A x − b‖ / ‖b‖`, recomputed from the returned iterate.
    pub residual_norm: f64,
    pub converged: bool,
}

impl SolveReport {
    pub(crate) fn trivial() -> Self {
        Self {
            iterations: 0,
            residual_norm: 0.0,
            converged: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `‖A x − b‖ / ‖b‖`.
    pub tol: f64,
    /// Iteration cap; `None` means `10·n`.
    pub max_iter: Option<usize>,
    /// Whether callers should use the best iterate when the cap is hit
    /// instead of failing (truncated CG). [`cg_solve`] itself always reports
    /// non-convergence in the [`SolveReport`].
    pub accept_truncated: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            accept_truncated: false,
        }
    }
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    /// Truncated CG: at most `max_iter` iterations, best iterate accepted.
    pub fn truncated(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter: Some(max_iter),
            accept_truncated: true,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioner `z = M⁻¹ r` for [`pcg_solve`]; `M` must be SPD.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Diagonal (Jacobi) preconditioner. Non-positive entries fall back to 1.
#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(diagonal: Vec<f64>) -> Self {
        let inv_diag = diagonal
            .into_iter()
            .map(|d| {
                if d > 0.0 && d.is_finite() {
                    1.0 / d
                } else {
                    1.0
                }
            })
            .collect();
        Self { inv_diag }
    }

    pub fn of<A: LinearOperator + ?Sized>(a: &A) -> Self {
        Self::new(a.diagonal())
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Sparse Cholesky factor `A = L Lᵀ` of a symmetric positive definite
/// operator, in natural ordering.
pub struct SparseCholesky {
    dim: usize,
    factor: CscCholesky<f64>,
}

impl std::fmt::Debug for SparseCholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseCholesky")
            .field("dim", &self.dim)
            .field("nnz_l", &self.factor.l().nnz())
            .finish()
    }
}

impl SparseCholesky {
    pub fn factor(a: &SparseOperator) -> Result<Self, LinalgError> {
        if !a.symmetric || a.nrows != a.ncols {
            return Err(LinalgError::NotSymmetric);
        }
        // a symmetric CSR matrix is its own CSC representation
        let csc = CscMatrix::try_from_csc_data(
            a.nrows,
            a.ncols,
            a.row_offsets.clone(),
            a.col_indices.clone(),
            a.values.clone(),
        )
        .map_err(|e| LinalgError::Structure(e.to_string()))?;
        let factor = CscCholesky::factor(&csc).map_err(|_| LinalgError::NotPositiveDefinite {
            iteration: 0,
            curvature: f64::NAN,
        })?;
        Ok(Self {
            dim: a.nrows,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factor_nnz(&self) -> usize {
        self.factor.l().nnz()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.dim, "right-hand side length");
        self.solve_interleaved::<1>(x);
    }

    /// Solves for `R` right-hand sides stored interleaved: entry `(i, k)` at
    /// `x[i * R + k]`. The factor is traversed once for all of them.
    pub fn solve_interleaved<const R: usize>(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.dim * R, "right-hand side length");
        let l = self.factor.l();
        let (offsets, rows, vals) = (l.col_offsets(), l.row_indices(), l.values());
        // forward: L y = b, diagonal stored first in each column
        for j in 0..self.dim {
            let (lo, hi) = (offsets[j], offsets[j + 1]);
            let mut xj = [0.0; R];
            for k in 0..R {
                xj[k] = x[j * R + k] / vals[lo];
                x[j * R + k] = xj[k];
            }
            for p in lo + 1..hi {
                let (row, v) = (rows[p] * R, vals[p]);
                for k in 0..R {
                    x[row + k] -= v * xj[k];
                }
            }
        }
        // backward: Lᵀ x = y
        for j in (0..self.dim).rev() {
            let (lo, hi) = (offsets[j], offsets[j + 1]);
            let mut acc = [0.0; R];
            acc.copy_from_slice(&x[j * R..j * R + R]);
            for p in lo + 1..hi {
                let (row, v) = (rows[p] * R, vals[p]);
                for k in 0..R {
                    acc[k] -= v * x[row + k];
                }
            }
            for k in 0..R {
                x[j * R + k] = acc[k] / vals[lo];
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

impl Preconditioner for SparseCholesky {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        self.solve_in_place(z);
    }
}

/// Jacobi-preconditioned conjugate gradients; see [`pcg_solve`].
pub fn cg_solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    if !a.is_symmetric() {
        return Err(LinalgError::NotSymmetric);
    }
    pcg_solve(a, b, &Jacobi::of(a), opts)
}

/// Preconditioned conjugate gradients from `x₀ = 0`, stopping when
/// `‖b − Ax‖ ≤ tol·‖b‖`. Convergence is confirmed against the true residual.
/// A run that exhausts the iteration cap returns the best iterate seen with
/// `converged = false`.
pub fn pcg_solve<A: LinearOperator + ?Sized, P: Preconditioner + ?Sized>(
    a: &A,
    b: &[f64],
    precond: &P,
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    let n = a.dim();
    if b.len() != n {
        return Err(LinalgError::Dimension {
            expected: n,
            actual: b.len(),
        });
    }
    if !a.is_symmetric() {
        return Err(LinalgError::NotSymmetric);
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Breakdown { iteration: 0 });
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], SolveReport::trivial()));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut best = (1.0, x.clone());
    let mut iterations = 0;

    while iterations < max_iter {
        a.apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !curvature.is_finite() {
            return Err(LinalgError::Breakdown {
                iteration: iterations,
            });
        }
        if curvature <= 0.0 {
            return Err(LinalgError::NotPositiveDefinite {
                iteration: iterations,
                curvature,
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        let rel = norm(&r) / b_norm;
        if !rel.is_finite() {
            return Err(LinalgError::Breakdown {
                iteration: iterations,
            });
        }
        if rel < best.0 {
            best = (rel, x.clone());
        }
        if rel <= opts.tol {
            // confirm against the true residual; restart from it if the
            // recurrence has drifted
            a.apply(&x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            let true_rel = norm(&r) / b_norm;
            if true_rel <= opts.tol {
                return Ok((
                    x,
                    SolveReport {
                        iterations,
                        residual_norm: true_rel,
                        converged: true,
                    },
                ));
            }
            precond.apply(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        precond.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    let x = best.1;
    a.apply(&x, &mut ap);
    let residual: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let rel = norm(&residual) / b_norm;
    Ok((
        x,
        SolveReport {
            iterations,
            residual_norm: rel,
            converged: rel <= opts.tol,
        },
    ))
}

/// Direct solve by LU with partial pivoting. Test oracle for the iterative
/// paths; intended for small systems only.
pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::Dimension {
            expected: n,
            actual: a.ncols(),
        });
    }
    if b.len() != n {
        return Err(LinalgError::Dimension {
            expected: n,
            actual: b.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
    let max_pivot = pivots.iter().cloned().fold(0.0, f64::max);
    let min_pivot = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if max_pivot == 0.0 || min_pivot <= (n as f64) * f64::EPSILON * max_pivot {
        return Err(LinalgError::Singular);
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    lu.solve(&rhs)
        .map(|x| x.as_slice().to_vec())
        .ok_or(LinalgError::Singular)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> SparseOperator {
        SparseOperator::from_triplets(
            2,
            2,
            vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)],
        )
        .unwrap()
        .into_symmetric()
        .unwrap()
    }

    fn random_sparse(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| {
            if rng.random::<f64>() < density {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        })
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = random_sparse(rng, n, 0.3);
        a.transpose() * &a + DMatrix::identity(n, n)
    }

    #[test]
    fn identity_spmv() {
        let x = vec![1.5, -2.0, 0.25];
        assert_eq!(SparseOperator::identity(3).spmv(&x).unwrap(), x);
    }

    #[test]
    fn small_spmv() {
        assert_eq!(two_by_two().spmv(&[1.0, 1.0]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn spmv_matches_dense_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_sparse(&mut rng, 10, 0.4);
        let s = SparseOperator::from_dense(&a);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = s.spmv(&x).unwrap();
        for r in 0..10 {
            let mut acc = 0.0;
            for c in 0..10 {
                if a[(r, c)] != 0.0 {
                    acc += a[(r, c)] * x[c];
                }
            }
            assert_eq!(y[r], acc);
        }
    }

    #[test]
    fn spmv_dimension_error() {
        assert!(matches!(
            two_by_two().spmv(&[1.0]),
            Err(LinalgError::Dimension { .. })
        ));
    }

    #[test]
    fn transpose_product_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let s = SparseOperator::from_dense(&a);
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let y = s.spmv_transpose(&x).unwrap();
        let expect = a.transpose() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..4 {
            assert!((y[i] - expect[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn triplets_sum_duplicates_and_validate() {
        let s = SparseOperator::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 0, 1.0), (1, 2, 0.5)])
            .unwrap();
        assert_eq!(s.get(1, 2), 1.5);
        assert_eq!(s.nnz(), 2);
        assert!(SparseOperator::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseOperator::from_csr(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn symmetry_flag_is_checked() {
        let s = SparseOperator::from_triplets(2, 2, vec![(0, 1, 1.0)]).unwrap();
        assert_eq!(s.clone().into_symmetric(), Err(LinalgError::NotSymmetric));
        assert!(matches!(
            cg_solve(&s, &[1.0, 1.0], &CgOptions::default()),
            Err(LinalgError::NotSymmetric)
        ));
    }

    #[test]
    fn weighted_normal_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_sparse(&mut rng, 7, 0.5);
        let w: Vec<f64> = (0..7).map(|_| rng.random_range(0.1..2.0)).collect();
        let s = SparseOperator::from_dense(&a).weighted_normal(&w);
        assert!(s.symmetric());
        let expect =
            a.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w.clone())) * &a;
        assert!((s.to_dense() - &expect).amax() < 1e-14);
        let diag = SparseOperator::from_dense(&a).weighted_column_norms(&w);
        for i in 0..7 {
            assert!((diag[i] - expect[(i, i)]).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_zero_rhs() {
        let (x, rep) = cg_solve(&two_by_two(), &[0.0, 0.0], &CgOptions::default()).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
    }

    #[test]
    fn cg_two_by_two() {
        let opts = CgOptions::with_tol(1e-12);
        let (x, rep) = cg_solve(&two_by_two(), &[3.0, 3.0], &opts).unwrap();
        assert!(rep.converged && rep.residual_norm <= 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cg_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [5, 20, 50] {
            let a = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = SparseOperator::from_dense(&a).into_symmetric().unwrap();
            let (x, rep) = cg_solve(&s, &b, &CgOptions::with_tol(1e-12)).unwrap();
            assert!(rep.converged);
            let xd = dense_solve(&a, &b).unwrap();
            let err: f64 = x
                .iter()
                .zip(&xd)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale: f64 = xd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err / scale < 1e-8, "n={n} rel err {}", err / scale);
        }
    }

    #[test]
    fn cg_reports_non_convergence_with_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_spd(&mut rng, 30);
        let s = SparseOperator::from_dense(&a).into_symmetric().unwrap();
        let b = vec![1.0; 30];
        let (x, rep) = cg_solve(
            &s,
            &b,
            &CgOptions {
                tol: 1e-14,
                max_iter: Some(2),
                accept_truncated: false,
            },
        )
        .unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 2);
        assert!(rep.residual_norm < 1.0);
        assert_eq!(x.len(), 30);
    }

    #[test]
    fn cg_nan_is_breakdown() {
        let s = SparseOperator::identity(2);
        assert!(matches!(
            cg_solve(&s, &[f64::NAN, 1.0], &CgOptions::default()),
            Err(LinalgError::Breakdown { .. })
        ));
        let bad = SparseOperator::from_triplets(1, 1, vec![(0, 0, f64::NAN)])
            .unwrap()
            .into_symmetric();
        // NaN != NaN, so the symmetry check itself refuses the operator
        assert!(bad.is_err());
    }

    #[test]
    fn cg_indefinite_is_rejected() {
        let s = SparseOperator::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, -1.0)])
            .unwrap()
            .into_symmetric()
            .unwrap();
        assert!(matches!(
            cg_solve(&s, &[0.0, 1.0], &CgOptions::default()),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn dense_solve_basics() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(
            dense_solve(&id, &[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        let one = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(dense_solve(&one, &[4.0]).unwrap(), vec![2.0]);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(
            dense_solve(&singular, &[1.0, 1.0]),
            Err(LinalgError::Singular)
        );
    }

    #[test]
    fn dense_solve_residual_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = dense_solve(&a, &b).unwrap();
        let ax = &a * nalgebra::DVector::from_column_slice(&x);
        let res: f64 = (0..8).map(|i| (ax[i] - b[i]).powi(2)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res < 1e-10 * bn);
    }
}
