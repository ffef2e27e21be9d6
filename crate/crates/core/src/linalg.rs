//! Sparse matrices, sparse Cholesky (via faer) and small dense eigenproblems.
//!
//! Matrix-vector products are row-parallel with sequential row sums, so
//! results do not depend on the thread count.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::traits::ComplexField;
use faer::{Mat, Side};
use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr<T> {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T> Csr<T>
where
    T: Copy + Zero + std::ops::Add<Output = T> + std::ops::Mul<Output = T> + Send + Sync,
{
    /// Square matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, T)>) -> Self {
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<T> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                let k = values.len() - 1;
                values[k] = values[k] + v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            indptr[r + 1] += indptr[r];
        }
        Csr { n, indptr, indices, values }
    }

    pub fn diagonal(n: usize, d: &[T]) -> Self {
        Csr::from_triplets(n, d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.row(r).find(|&(j, _)| j == c).map(|(_, v)| v).unwrap_or_else(T::zero)
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n).into_par_iter().map(|r| self.row(r).fold(T::zero(), |acc, (c, v)| acc + v * x[c])).collect()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.n).flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v))).collect()
    }

    /// `self + s·other` for matrices of equal size.
    pub fn add_scaled(&self, other: &Csr<T>, s: T) -> Self {
        let mut t = self.triplets();
        t.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, s * v)));
        Csr::from_triplets(self.n, t)
    }
}

impl Csr<Complex64> {
    /// `max |A_ij − conj(A_ji)|`.
    pub fn hermitian_residual(&self) -> f64 {
        (0..self.n).flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v))).map(|(r, c, v)| (v - self.get(c, r).conj()).norm()).fold(0.0, f64::max)
    }
}

impl Csr<f64> {
    pub fn symmetric_residual(&self) -> f64 {
        (0..self.n).flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v))).map(|(r, c, v)| (v - self.get(c, r)).abs()).fold(0.0, f64::max)
    }
}

/// Sparse Cholesky factorization of a Hermitian positive definite matrix.
pub struct Cholesky<T: ComplexField> {
    n: usize,
    llt: Llt<usize, T>,
}

impl<T> Cholesky<T>
where
    T: ComplexField + Copy + Zero + std::ops::Add<Output = T> + std::ops::Mul<Output = T> + Send + Sync,
{
    pub fn new(a: &Csr<T>) -> Result<Self> {
        let trip: Vec<Triplet<usize, usize, T>> = a.triplets().into_iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let m = SparseColMat::<usize, T>::try_new_from_triplets(a.n, a.n, &trip).map_err(|e| Error::Internal(format!("sparse matrix assembly: {e:?}")))?;
        let llt = m.sp_cholesky(Side::Lower).map_err(|e| Error::Numerical(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(Cholesky { n: a.n, llt })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut m = Mat::<T>::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    /// Solve for several right-hand sides at once.
    pub fn solve_many(&self, cols: &[Vec<T>]) -> Vec<Vec<T>> {
        let mut m = Mat::<T>::from_fn(self.n, cols.len(), |i, j| cols[j][i]);
        self.llt.solve_in_place(m.as_mut());
        (0..cols.len()).map(|j| (0..self.n).map(|i| m[(i, j)]).collect()).collect()
    }
}

/// Eigen-decomposition of a dense Hermitian matrix, ascending.
pub fn hermitian_eigen(a: &[Vec<Complex64>]) -> Result<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let n = a.len();
    let m = Mat::<Complex64>::from_fn(n, n, |i, j| if i >= j { a[i][j] } else { a[j][i].conj() });
    let e = m.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Numerical(format!("dense eigensolver: {e:?}")))?;
    let s = e.S().column_vector();
    let u = e.U();
    let vals = (0..n).map(|i| s[i].re).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| u[(i, j)]).collect()).collect();
    Ok((vals, vecs))
}

/// Eigen-decomposition of a dense real symmetric matrix, ascending.
pub fn symmetric_eigen(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.len();
    let m = Mat::<f64>::from_fn(n, n, |i, j| if i >= j { a[i][j] } else { a[j][i] });
    let e = m.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Numerical(format!("dense eigensolver: {e:?}")))?;
    let s = e.S().column_vector();
    let u = e.U();
    let vals = (0..n).map(|i| s[i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| u[(i, j)]).collect()).collect();
    Ok((vals, vecs))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ conj(a_i) b_i w_i`.
pub fn cdot_weighted(a: &[Complex64], b: &[Complex64], w: &[f64]) -> Complex64 {
    a.iter().zip(b).zip(w).map(|((x, y), m)| x.conj() * y * m).sum()
}

/// Result of [`pcg`].
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖r‖ / ‖b‖`.
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric positive semidefinite
/// operator on a subspace the iteration never leaves.
pub fn pcg<A, P>(apply: A, precond: P, b: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    A: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(CgOutcome { x, iterations: 0, relative_residual: 0.0 });
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!("CG breakdown: pᵀAp = {pap}")));
        }
        let a = rz / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel < tol {
            return Ok(CgOutcome { x, iterations: it, relative_residual: rel });
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = dot(&r, &r).sqrt() / bnorm;
    Err(Error::NotConverged { iterations: max_iter, residuals: vec![rel] })
}
