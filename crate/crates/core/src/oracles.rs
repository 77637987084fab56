//! Finite-sum stochastic first-order oracles.
//!
//! An oracle exposes `f(x) = (1/N) sum_i F(x, xi_i)` through per-sample
//! losses and gradients. Sampling is uniform with replacement; the oracle
//! never owns randomness, callers pass their own generator.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::datastore::Dataset;
use crate::numkernel::{self, dot, ldlt_factorize, solve_spd, DenseVector, LinalgError, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle has no samples")]
    EmptyDataset,
    #[error("rank must satisfy 1 <= rank < n (rank {rank}, n {n})")]
    InvalidRank { rank: usize, n: usize },
    #[error("invalid oracle data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A finite-sum objective with per-sample access.
pub trait StochasticOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn num_samples(&self) -> usize;

    /// `F(x, xi_i)`
    fn per_sample_loss(&self, x: &DenseVector, i: usize) -> f64;

    /// `grad F(x, xi_i)`
    fn per_sample_gradient(&self, x: &DenseVector, i: usize) -> DenseVector;

    fn full_loss(&self, x: &DenseVector) -> f64 {
        let n = self.num_samples();
        (0..n).map(|i| self.per_sample_loss(x, i)).sum::<f64>() / n as f64
    }

    fn full_gradient(&self, x: &DenseVector) -> DenseVector {
        let n = self.num_samples();
        let mut g = DenseVector::zeros(self.dim());
        for i in 0..n {
            g.axpy(1.0, &self.per_sample_gradient(x, i));
        }
        g.scaled(1.0 / n as f64)
    }

    /// A Lipschitz constant of `grad f`.
    fn lipschitz_bound(&self) -> f64;

    /// `f*` when known by construction.
    fn optimal_value(&self) -> Option<f64> {
        None
    }

    fn kind(&self) -> &'static str;
}

/// A drawn stochastic gradient together with the index of its sample, so the
/// same sample can be re-evaluated at another point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEval {
    pub gradient: DenseVector,
    pub sample_id: usize,
}

/// Draws one sample uniformly with replacement and evaluates its gradient.
pub fn sample_gradient<O, R>(oracle: &O, x: &DenseVector, rng: &mut R) -> Result<OracleEval, OracleError>
where
    O: StochasticOracle + ?Sized,
    R: Rng + ?Sized,
{
    let n = oracle.num_samples();
    if n == 0 {
        return Err(OracleError::EmptyDataset);
    }
    let sample_id = rng.random_range(0..n);
    Ok(OracleEval {
        gradient: oracle.per_sample_gradient(x, sample_id),
        sample_id,
    })
}

/// Mean squared deviation of the per-sample gradients from the full gradient
/// at `x`: an empirical stand-in for the variance bound.
pub fn variance_estimate<O: StochasticOracle + ?Sized>(oracle: &O, x: &DenseVector) -> f64 {
    let full = oracle.full_gradient(x);
    let n = oracle.num_samples();
    (0..n)
        .map(|i| oracle.per_sample_gradient(x, i).sub(&full).norm_squared())
        .sum::<f64>()
        / n as f64
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of label `v` against `sigma(u^T x)`, evaluated as
/// `log(1 + e^{-z}) + (1 - v) z`.
///
/// Panics if `x` and `u` differ in length.
pub fn logistic_per_sample_loss(x: &[f64], u: &[f64], v: f64) -> f64 {
    assert_eq!(x.len(), u.len(), "dimension mismatch");
    let z = dot(u, x);
    softplus(-z) + (1.0 - v) * z
}

/// `(sigma(u^T x) - v) u`. Panics if `x` and `u` differ in length.
pub fn logistic_per_sample_gradient(x: &[f64], u: &[f64], v: f64) -> DenseVector {
    assert_eq!(x.len(), u.len(), "dimension mismatch");
    let r = sigmoid(dot(u, x)) - v;
    DenseVector::from_vec(u.iter().map(|ui| r * ui).collect())
}

/// Averaged logistic loss over a labelled dataset.
#[derive(Debug, Clone)]
pub struct LogisticOracle {
    data: Dataset,
    lipschitz: f64,
}

impl LogisticOracle {
    pub fn new(data: Dataset) -> Self {
        let n = data.n_rows();
        let lipschitz = (0..n).map(|i| dot(data.row(i), data.row(i))).sum::<f64>() / (4.0 * n as f64);
        Self { data, lipschitz }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }
}

impl StochasticOracle for LogisticOracle {
    fn dim(&self) -> usize {
        self.data.n_cols()
    }

    fn num_samples(&self) -> usize {
        self.data.n_rows()
    }

    fn per_sample_loss(&self, x: &DenseVector, i: usize) -> f64 {
        logistic_per_sample_loss(x.as_slice(), self.data.row(i), self.data.label(i))
    }

    fn per_sample_gradient(&self, x: &DenseVector, i: usize) -> DenseVector {
        logistic_per_sample_gradient(x.as_slice(), self.data.row(i), self.data.label(i))
    }

    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    fn kind(&self) -> &'static str {
        "logistic"
    }
}

/// Least squares `f(x) = (1/2N) ||Ax - b||^2` with per-sample terms
/// `(1/2)(a_i^T x - b_i)^2`.
///
/// The full gradient is evaluated as `Hx - c` with `H = A^T A / N` and
/// `c = A^T b / N`, independently of the per-sample route.
#[derive(Debug, Clone)]
pub struct QuadraticOracle {
    n: usize,
    rows: Vec<f64>,
    targets: Vec<f64>,
    hessian: SymMatrix,
    linear: DenseVector,
    lipschitz: f64,
    minimizer: Option<DenseVector>,
    optimal_value: Option<f64>,
}

impl QuadraticOracle {
    /// Builds the oracle from explicit rows `a_i` and targets `b_i`.
    pub fn from_parts(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, OracleError> {
        if rows.is_empty() {
            return Err(OracleError::EmptyDataset);
        }
        let n = rows[0].len();
        if n == 0 || rows.iter().any(|r| r.len() != n) || targets.len() != rows.len() {
            return Err(OracleError::Invalid("ragged rows or target count mismatch".into()));
        }
        if rows.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return Err(OracleError::Invalid("non-finite entry".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_flat(n, flat, targets)
    }

    fn from_flat(n: usize, rows: Vec<f64>, targets: Vec<f64>) -> Result<Self, OracleError> {
        let samples = targets.len();
        let inv = 1.0 / samples as f64;
        let mut h = vec![vec![0.0; n]; n];
        let mut c = vec![0.0; n];
        for (a, &b) in rows.chunks(n).zip(&targets) {
            for i in 0..n {
                c[i] += a[i] * b * inv;
                for j in 0..=i {
                    h[i][j] += a[i] * a[j] * inv;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                h[j][i] = h[i][j];
            }
        }
        let hessian = SymMatrix::from_rows(&h)?;
        let lipschitz = numkernel::max_eigenvalue(&hessian)?.max(0.0);
        Ok(Self {
            n,
            rows,
            targets,
            hessian,
            linear: DenseVector::from_vec(c),
            lipschitz,
            minimizer: None,
            optimal_value: None,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    /// `A^T A / N`.
    pub fn hessian(&self) -> &SymMatrix {
        &self.hessian
    }

    /// `A^T b / N`.
    pub fn linear_term(&self) -> &DenseVector {
        &self.linear
    }

    pub fn minimizer(&self) -> Option<&DenseVector> {
        self.minimizer.as_ref()
    }

    /// Minimizer of `f(x) + (mu/2)||x||^2`, from `(H + mu I) x = c`.
    pub fn regularized_minimizer(&self, mu: f64) -> Result<DenseVector, OracleError> {
        let mut shifted = self.hessian.clone();
        shifted.add_to_diagonal(mu);
        Ok(solve_spd(&ldlt_factorize(&shifted)?, &self.linear)?)
    }
}

impl StochasticOracle for QuadraticOracle {
    fn dim(&self) -> usize {
        self.n
    }

    fn num_samples(&self) -> usize {
        self.targets.len()
    }

    fn per_sample_loss(&self, x: &DenseVector, i: usize) -> f64 {
        let r = dot(self.row(i), x.as_slice()) - self.targets[i];
        0.5 * r * r
    }

    fn per_sample_gradient(&self, x: &DenseVector, i: usize) -> DenseVector {
        let a = self.row(i);
        let r = dot(a, x.as_slice()) - self.targets[i];
        DenseVector::from_vec(a.iter().map(|ai| r * ai).collect())
    }

    fn full_gradient(&self, x: &DenseVector) -> DenseVector {
        let mut g = self.hessian.mul_vec(x).expect("dimension checked by caller");
        g.axpy(-1.0, &self.linear);
        g
    }

    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    fn optimal_value(&self) -> Option<f64> {
        self.optimal_value
    }

    fn kind(&self) -> &'static str {
        "quadratic"
    }
}

/// Seeded least-squares instance whose `N x n` design matrix has the given
/// rank, so `f` is convex but not strongly convex.
///
/// `A = G V` with Gaussian `G` (`N x rank`) and orthonormal rows `V`
/// (`rank x n`), rescaled so the largest eigenvalue of `A^T A / N` is one.
/// Targets are `b = A x_ref` with a unit `x_ref` in the row space of `A`,
/// hence `f* = 0` and `x_ref` is the least-norm minimizer.
pub fn make_rank_deficient_quadratic(
    n: usize,
    rank: usize,
    samples: usize,
    seed: u64,
) -> Result<QuadraticOracle, OracleError> {
    if rank == 0 || rank >= n {
        return Err(OracleError::InvalidRank { rank, n });
    }
    if samples == 0 {
        return Err(OracleError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut v: Vec<f64> = (0..rank * n).map(|_| normal()).collect();
    let g: Vec<f64> = (0..samples * rank).map(|_| normal()).collect();
    let z: Vec<f64> = (0..rank).map(|_| normal()).collect();

    // modified Gram-Schmidt, two passes
    for r in 0..rank {
        for _ in 0..2 {
            for p in 0..r {
                let d = dot(&v[r * n..(r + 1) * n], &v[p * n..(p + 1) * n]);
                for j in 0..n {
                    v[r * n + j] -= d * v[p * n + j];
                }
            }
        }
        let norm = dot(&v[r * n..(r + 1) * n], &v[r * n..(r + 1) * n]).sqrt();
        v[r * n..(r + 1) * n].iter_mut().for_each(|x| *x /= norm);
    }

    let mut a = vec![0.0; samples * n];
    for i in 0..samples {
        for r in 0..rank {
            let gir = g[i * rank + r];
            for j in 0..n {
                a[i * n + j] += gir * v[r * n + j];
            }
        }
    }
    let unscaled = QuadraticOracle::from_flat(n, a, vec![0.0; samples])?;
    let scale = 1.0 / unscaled.lipschitz.sqrt();
    let mut a = unscaled.rows;
    a.iter_mut().for_each(|x| *x *= scale);

    let mut x_ref = vec![0.0; n];
    for r in 0..rank {
        for j in 0..n {
            x_ref[j] += z[r] * v[r * n + j];
        }
    }
    let norm = dot(&x_ref, &x_ref).sqrt();
    x_ref.iter_mut().for_each(|x| *x /= norm);
    let targets: Vec<f64> = a.chunks(n).map(|row| dot(row, &x_ref)).collect();

    let mut q = QuadraticOracle::from_flat(n, a, targets)?;
    q.minimizer = Some(DenseVector::new(x_ref)?);
    q.optimal_value = Some(0.0);
    Ok(q)
}

/// `f_mu(x) = f(x) + (mu/2)||x||^2` over a borrowed oracle.
#[derive(Debug, Clone, Copy)]
pub struct RegularizedView<'a, O: ?Sized> {
    pub base: &'a O,
    pub mu: f64,
}

impl<'a, O: StochasticOracle + ?Sized> RegularizedView<'a, O> {
    pub fn new(base: &'a O, mu: f64) -> Self {
        Self { base, mu }
    }

    pub fn loss(&self, x: &DenseVector) -> f64 {
        self.base.full_loss(x) + 0.5 * self.mu * x.norm_squared()
    }

    pub fn gradient(&self, x: &DenseVector) -> DenseVector {
        let mut g = self.base.full_gradient(x);
        g.axpy(self.mu, x);
        g
    }

    pub fn per_sample_gradient(&self, x: &DenseVector, i: usize) -> DenseVector {
        let mut g = self.base.per_sample_gradient(x, i);
        g.axpy(self.mu, x);
        g
    }
}

/// The chain `2 mu gap <= ||grad f_mu(x)||^2 <= 2 (L + mu) gap` with
/// `gap = f_mu(x) - min f_mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapChain {
    pub lhs: f64,
    pub mid: f64,
    pub rhs: f64,
}

impl GapChain {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.mid + slack && self.mid <= self.rhs + slack
    }
}

pub fn regularized_gap_check(oracle: &QuadraticOracle, mu: f64, x: &DenseVector) -> Result<GapChain, OracleError> {
    let view = RegularizedView::new(oracle, mu);
    let x_star = oracle.regularized_minimizer(mu)?;
    let gap = view.loss(x) - view.loss(&x_star);
    let lhs = 2.0 * mu * gap;
    let mid = view.gradient(x).norm_squared();
    let rhs = 2.0 * (oracle.lipschitz_bound() + mu) * gap;
    Ok(GapChain { lhs, mid, rhs })
}
