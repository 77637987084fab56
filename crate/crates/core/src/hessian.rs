//! Cyclic regularized BFGS matrix.
//!
//! On even iterations the matrix is replaced by
//!
//! ```text
//! B+ = B - (B s)(B s)^T / (s^T B s) + y y^T / (s^T y) + rho mu I
//! y  = grad_diff + (1 - rho) mu s
//! ```
//!
//! which satisfies the secant equation `B+ s = grad_diff + mu s` and the
//! spectral floor `B+ >= rho mu I`. Odd iterations keep `B` as is.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkernel::{self, ldlt_factorize, solve_spd, DenseVector, LinalgError, SpdFactorization, SymMatrix};

/// Updates with `s^T y <= SECANT_EPS * ||s||^2` are skipped.
pub const SECANT_EPS: f64 = 1e-12;

/// Absolute slack used when comparing eigenvalues against the floor.
pub const FLOOR_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HessianError {
    #[error("rho must lie in (0, 1), got {0}")]
    InvalidRho(f64),
    #[error("initial matrix violates the floor: min eigenvalue {min_eigenvalue} < {floor}")]
    FloorViolation { min_eigenvalue: f64, floor: f64 },
    #[error("zero step in matrix update")]
    ZeroStep,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Diagnostics of one even-iteration update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    /// `s^T y` with the shifted gradient difference.
    pub curvature: f64,
    /// `||B+ s - (grad_diff + mu s)||`; measured against the unchanged
    /// matrix when the update is skipped.
    pub secant_residual: f64,
    /// `||grad_diff + mu s||`
    pub target_norm: f64,
    pub skipped: bool,
}

impl UpdateReport {
    /// `secant_residual / (1 + target_norm)`
    pub fn relative_residual(&self) -> f64 {
        self.secant_residual / (1.0 + self.target_norm)
    }
}

#[derive(Debug, Clone)]
pub struct CyclicBfgsState {
    b: SymMatrix,
    factor: Option<SpdFactorization>,
    rho: f64,
    mu_floor: f64,
    update_count: u64,
    skip_count: u64,
    odd_passes: u64,
}

impl CyclicBfgsState {
    /// Starts from `b0`, or `max(1, rho mu0) I` when absent.
    pub fn init(n: usize, mu0: f64, rho: f64, b0: Option<SymMatrix>) -> Result<Self, HessianError> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(HessianError::InvalidRho(rho));
        }
        let floor = rho * mu0;
        let b = match b0 {
            Some(b) => {
                if b.order() != n {
                    return Err(LinalgError::DimensionMismatch {
                        expected: n,
                        found: b.order(),
                    }
                    .into());
                }
                let min_eigenvalue = numkernel::min_eigenvalue(&b)?;
                if min_eigenvalue < floor - FLOOR_SLACK {
                    return Err(HessianError::FloorViolation { min_eigenvalue, floor });
                }
                b
            }
            None => SymMatrix::scaled_identity(n, floor.max(1.0)),
        };
        Ok(Self {
            b,
            factor: None,
            rho,
            mu_floor: floor,
            update_count: 0,
            skip_count: 0,
            odd_passes: 0,
        })
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.b
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Proven lower bound on the spectrum of the current matrix.
    pub fn mu_floor(&self) -> f64 {
        self.mu_floor
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn skip_count(&self) -> u64 {
        self.skip_count
    }

    pub fn odd_passes(&self) -> u64 {
        self.odd_passes
    }

    pub fn has_cached_factor(&self) -> bool {
        self.factor.is_some()
    }

    /// `(B^{-1} + delta I) g`, refactorizing `B` if an update invalidated
    /// the cache.
    pub fn apply_direction(&mut self, delta: f64, g: &DenseVector) -> Result<DenseVector, HessianError> {
        g.check_dim(self.b.order())?;
        if self.factor.is_none() {
            self.factor = Some(ldlt_factorize(&self.b)?);
        }
        let factor = self.factor.as_ref().expect("just populated");
        let mut d = solve_spd(factor, g)?;
        d.axpy(delta, g);
        Ok(d)
    }

    /// Even-iteration update from step `s = x_{k+1} - x_k` and
    /// `grad_diff = grad F(x_{k+1}, xi_k) - grad F(x_k, xi_k)` (same sample).
    pub fn update_even(
        &mut self,
        s: &DenseVector,
        grad_diff: &DenseVector,
        mu: f64,
    ) -> Result<UpdateReport, HessianError> {
        let n = self.b.order();
        s.check_dim(n)?;
        grad_diff.check_dim(n)?;
        let s_norm_sq = s.norm_squared();
        if s_norm_sq == 0.0 {
            return Err(HessianError::ZeroStep);
        }
        let mut y = grad_diff.clone();
        y.axpy((1.0 - self.rho) * mu, s);
        let curvature = s.dot(&y);
        let mut target = grad_diff.clone();
        target.axpy(mu, s);

        let skipped = !(curvature > SECANT_EPS * s_norm_sq);
        if skipped {
            self.skip_count += 1;
            log::warn!("skipping matrix update: s^T y = {curvature:e}");
        } else {
            let bs = self.b.mul_vec(s)?;
            let s_b_s = s.dot(&bs);
            self.b.add_rank_one(-1.0 / s_b_s, &bs);
            self.b.add_rank_one(1.0 / curvature, &y);
            self.b.add_to_diagonal(self.rho * mu);
            self.mu_floor = self.rho * mu;
            self.update_count += 1;
            self.factor = None;
        }
        let secant_residual = self.b.mul_vec(s)?.sub(&target).norm();
        Ok(UpdateReport {
            curvature,
            secant_residual,
            target_norm: target.norm(),
            skipped,
        })
    }

    /// Odd iteration: `B` is carried over unchanged.
    pub fn copy_odd(&mut self) {
        self.odd_passes += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::min_eigenvalue;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> DenseVector {
        DenseVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn init_defaults_to_identity() {
        let st = CyclicBfgsState::init(3, 0.9, 0.9, None).unwrap();
        assert_eq!(st.matrix(), &SymMatrix::identity(3));
        assert!((st.mu_floor() - 0.81).abs() < 1e-15);
        let st = CyclicBfgsState::init(2, 10.0, 0.5, None).unwrap();
        assert_eq!(st.matrix(), &SymMatrix::scaled_identity(2, 5.0));
    }

    #[test]
    fn init_enforces_floor() {
        let err = CyclicBfgsState::init(2, 0.9, 0.9, Some(SymMatrix::scaled_identity(2, 0.5))).unwrap_err();
        assert!(matches!(err, HessianError::FloorViolation { .. }));
        let b0 = SymMatrix::from_diagonal(&[0.81, 2.0]).unwrap();
        assert!(CyclicBfgsState::init(2, 0.9, 0.9, Some(b0)).is_ok());
        assert!(CyclicBfgsState::init(2, 0.9, 1.0, None).is_err());
        assert!(CyclicBfgsState::init(3, 0.9, 0.9, Some(SymMatrix::identity(2))).is_err());
    }

    #[test]
    fn direction_examples() {
        let mut st = CyclicBfgsState::init(2, 0.9, 0.9, None).unwrap();
        assert_eq!(st.apply_direction(1.0, &v(&[1.0, -3.0])).unwrap(), v(&[2.0, -6.0]));
        let b0 = SymMatrix::from_diagonal(&[2.0]).unwrap();
        let mut st = CyclicBfgsState::init(1, 1.0, 0.5, Some(b0)).unwrap();
        assert_eq!(st.apply_direction(0.5, &v(&[4.0])).unwrap(), v(&[4.0]));
    }

    #[test]
    fn scalar_update_example() {
        let b0 = SymMatrix::identity(1);
        let mut st = CyclicBfgsState::init(1, 0.1, 0.5, Some(b0)).unwrap();
        let r = st.update_even(&v(&[1.0]), &v(&[0.5]), 0.1).unwrap();
        assert!(!r.skipped);
        assert!((r.curvature - 0.55).abs() < 1e-15);
        assert!((st.matrix().get(0, 0) - 0.6).abs() < 1e-15);
        assert!(r.secant_residual < 1e-15);
        assert!((r.target_norm - 0.6).abs() < 1e-15);
        assert!((st.mu_floor() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn axis_update_example() {
        let mut st = CyclicBfgsState::init(2, 1.0, 0.5, None).unwrap();
        let r = st.update_even(&v(&[1.0, 0.0]), &v(&[0.0, 0.0]), 1.0).unwrap();
        assert!(!r.skipped);
        assert_eq!(st.matrix().to_rows(), vec![vec![1.0, 0.0], vec![0.0, 1.5]]);
        assert!(min_eigenvalue(st.matrix()).unwrap() >= 0.5);
    }

    #[test]
    fn update_invalidates_cache_and_odd_keeps_it() {
        let mut st = CyclicBfgsState::init(2, 1.0, 0.5, None).unwrap();
        st.apply_direction(1.0, &v(&[1.0, 1.0])).unwrap();
        assert!(st.has_cached_factor());
        let before = st.matrix().clone();
        let floor = st.mu_floor();
        st.copy_odd();
        assert!(st.has_cached_factor());
        assert_eq!(st.matrix(), &before);
        assert_eq!(st.mu_floor(), floor);
        assert_eq!(st.update_count(), 0);
        assert_eq!(st.odd_passes(), 1);
        st.update_even(&v(&[1.0, 0.0]), &v(&[0.2, 0.1]), 1.0).unwrap();
        assert!(!st.has_cached_factor());
        assert_eq!(st.update_count(), 1);
    }

    #[test]
    fn zero_step_rejected() {
        let mut st = CyclicBfgsState::init(2, 1.0, 0.5, None).unwrap();
        assert_eq!(
            st.update_even(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 1.0).unwrap_err(),
            HessianError::ZeroStep
        );
    }

    #[test]
    fn negative_curvature_is_skipped() {
        let mut st = CyclicBfgsState::init(2, 1.0, 0.5, None).unwrap();
        let before = st.matrix().clone();
        let r = st.update_even(&v(&[1.0, 0.0]), &v(&[-5.0, 0.0]), 1.0).unwrap();
        assert!(r.skipped);
        assert_eq!(st.matrix(), &before);
        assert_eq!(st.skip_count(), 1);
        assert_eq!(st.update_count(), 0);
    }

    fn psd_matrix(n: usize, entries: &[f64]) -> Vec<Vec<f64>> {
        // M = G G^T / n
        let g = |i: usize, j: usize| entries[(i * n + j) % entries.len()];
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| g(i, k) * g(j, k)).sum::<f64>() / n as f64)
                    .collect()
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Sequences of updates with a convex curvature `grad_diff = M s`
        /// keep the secant identity, the floor and the eigenvalue band.
        #[test]
        fn update_invariants(
            n in 1usize..8,
            entries in proptest::collection::vec(-2.0f64..2.0, 64),
            steps in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 8), 1..12),
            mu0 in 0.01f64..2.0,
            rho in 0.05f64..0.95,
        ) {
            let m = SymMatrix::from_rows(&psd_matrix(n, &entries)).unwrap();
            let mut st = CyclicBfgsState::init(n, mu0, rho, None).unwrap();
            let mut mu = mu0;
            for (idx, raw) in steps.iter().enumerate() {
                let s = DenseVector::new(raw[..n].to_vec()).unwrap();
                if s.norm() < 1e-3 {
                    continue;
                }
                let grad_diff = m.mul_vec(&s).unwrap();
                let r = st.update_even(&s, &grad_diff, mu).unwrap();
                prop_assert!(!r.skipped);
                prop_assert!(r.curvature >= (1.0 - rho) * mu * s.norm_squared() - 1e-10);
                prop_assert!(r.secant_residual <= 1e-8 * (1.0 + r.target_norm));
                prop_assert!(min_eigenvalue(st.matrix()).unwrap() >= rho * mu - FLOOR_SLACK);

                let g = DenseVector::new(raw.iter().rev().take(n).cloned().collect()).unwrap();
                if g.norm() > 1e-6 {
                    let delta = 0.5 / (idx as f64 + 1.0);
                    let d = st.apply_direction(delta, &g).unwrap();
                    let q = g.dot(&d);
                    let gg = g.norm_squared();
                    prop_assert!(q >= delta * gg * (1.0 - 1e-12));
                    prop_assert!(q <= (1.0 / (rho * mu) + delta) * gg * (1.0 + 1e-9));
                }
                mu *= 0.8;
            }
        }
    }
}
