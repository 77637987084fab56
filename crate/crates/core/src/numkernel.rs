//! Dense small-scale linear algebra for the Hessian approximations.
//!
//! Matrices here are tiny (n up to a few hundred), so everything is plain
//! row-major `f64` storage. Inverses are never formed: callers factorize
//! once with [`ldlt_factorize`] and reuse the factor through [`solve_spd`].

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative pivot threshold used by [`ldlt_factorize`].
pub const PIVOT_RELATIVE_FLOOR: f64 = 1e-13;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite entry")]
    NonFinite,
    #[error("matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("matrix is not square")]
    NotSquare,
    #[error("empty vector or matrix")]
    Empty,
}

/// A finite vector in `R^n`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self, LinalgError> {
        if values.is_empty() {
            return Err(LinalgError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self(values))
    }

    /// Wraps `values` without checking; callers inspect [`is_finite`](Self::is_finite)
    /// where the result can overflow.
    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &DenseVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> DenseVector {
        Self(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn add(&self, other: &DenseVector) -> DenseVector {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &DenseVector) -> DenseVector {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<(), LinalgError> {
        if self.dim() != expected {
            return Err(LinalgError::DimensionMismatch {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = LinalgError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric matrix holding only its lower triangle, so symmetry holds by
/// construction.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    // Packed row-major lower triangle: entry (i, j), j <= i, at i*(i+1)/2 + j.
    lower: Vec<f64>,
}

#[inline]
fn packed(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            lower: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut m = Self::zeros(n);
        m.add_to_diagonal(scale);
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, LinalgError> {
        if diag.is_empty() {
            return Err(LinalgError::Empty);
        }
        if diag.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.lower[packed(i, i)] = d;
        }
        Ok(m)
    }

    /// Builds a matrix from full rows. Asymmetric input is rejected, never
    /// symmetrized.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        if n == 0 {
            return Err(LinalgError::Empty);
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(LinalgError::NotSquare);
        }
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if !rows[i][j].is_finite() {
                    return Err(LinalgError::NonFinite);
                }
                if rows[i][j] != rows[j][i] {
                    return Err(LinalgError::Asymmetric { row: i, col: j });
                }
            }
            for j in 0..=i {
                m.lower[packed(i, j)] = rows[i][j];
            }
        }
        Ok(m)
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.lower[packed(i, j)]
        } else {
            self.lower[packed(j, i)]
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.lower[packed(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.lower.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.lower.iter().all(|v| v.is_finite())
    }

    pub fn mul_vec(&self, v: &DenseVector) -> Result<DenseVector, LinalgError> {
        v.check_dim(self.n)?;
        let x = v.as_slice();
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.lower[packed(i, 0)..=packed(i, i)];
            out[i] += dot(row, &x[..=i]);
            for (j, &a) in row[..i].iter().enumerate() {
                out[j] += a * x[i];
            }
        }
        Ok(DenseVector::from_vec(out))
    }

    /// `self += alpha * u u^T`
    pub(crate) fn add_rank_one(&mut self, alpha: f64, u: &DenseVector) {
        let u = u.as_slice();
        for i in 0..self.n {
            let scaled = alpha * u[i];
            let base = packed(i, 0);
            for j in 0..=i {
                self.lower[base + j] += scaled * u[j];
            }
        }
    }

    pub(crate) fn add_to_diagonal(&mut self, s: f64) {
        for i in 0..self.n {
            self.lower[packed(i, i)] += s;
        }
    }

    fn to_full(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.lower[packed(i, j)];
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        a
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymMatrix")
            .field("n", &self.n)
            .field("rows", &self.to_rows())
            .finish()
    }
}

/// `L D L^T` factor of a symmetric positive definite matrix, with `L` unit
/// lower triangular and `D` strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdFactorization {
    n: usize,
    // Strictly lower part of L, packed like SymMatrix (diagonal slots hold 1).
    l: Vec<f64>,
    d: Vec<f64>,
}

impl SpdFactorization {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Entry (i, j) of the unit lower factor.
    pub fn l(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Greater => self.l[packed(i, j)],
        }
    }

    /// Recomputes `L D L^T`.
    pub fn reconstruct(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..=i {
                m.lower[packed(i, j)] = (0..=j).map(|k| self.l(i, k) * self.d[k] * self.l(j, k)).sum();
            }
        }
        m
    }
}

pub fn ldlt_factorize(m: &SymMatrix) -> Result<SpdFactorization, LinalgError> {
    let n = m.order();
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let floor = PIVOT_RELATIVE_FLOOR * m.trace();
    let mut l = vec![0.0; n * (n + 1) / 2];
    let mut d = vec![0.0; n];
    // Row j of L scaled by D, reused across the column sweep.
    let mut ld = vec![0.0; n];
    for j in 0..n {
        let rj = packed(j, 0);
        for k in 0..j {
            ld[k] = l[rj + k] * d[k];
        }
        let pivot = m.lower[packed(j, j)] - dot(&l[rj..rj + j], &ld[..j]);
        if !(pivot > 0.0) || pivot < floor {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot });
        }
        d[j] = pivot;
        l[packed(j, j)] = 1.0;
        for i in j + 1..n {
            let ri = packed(i, 0);
            let s = m.lower[ri + j] - dot(&l[ri..ri + j], &ld[..j]);
            l[ri + j] = s / pivot;
        }
    }
    Ok(SpdFactorization { n, l, d })
}

pub fn solve_spd(f: &SpdFactorization, rhs: &DenseVector) -> Result<DenseVector, LinalgError> {
    let n = f.n;
    rhs.check_dim(n)?;
    let mut x = rhs.as_slice().to_vec();
    // L z = b
    for i in 0..n {
        let ri = packed(i, 0);
        x[i] -= dot(&f.l[ri..ri + i], &x[..i]);
    }
    for (xi, di) in x.iter_mut().zip(&f.d) {
        *xi /= di;
    }
    // L^T x = w
    for i in (0..n).rev() {
        let xi = x[i];
        let ri = packed(i, 0);
        for k in 0..i {
            x[k] -= f.l[ri + k] * xi;
        }
    }
    Ok(DenseVector::from_vec(x))
}

/// All eigenvalues in ascending order, by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &SymMatrix) -> Result<Vec<f64>, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = m.order();
    let mut a = m.to_full();
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * 1e-3 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(symmetric_eigenvalues(m)?[0])
}

pub fn max_eigenvalue(m: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(*symmetric_eigenvalues(m)?.last().expect("order >= 1"))
}
