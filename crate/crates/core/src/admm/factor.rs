//! Prefactorised solver for the `zeta` update system `(rho1 I + rho2 Psi^T Psi) z = b`.
//!
//! `Psi` is the lower-triangular matrix of ones, so `Psi^-1 = D` is the first-difference
//! matrix and `(Psi^T Psi)^-1 = D D^T` is tridiagonal. Writing
//! `rho1 I + rho2 Psi^T Psi = Psi^T Psi (rho1 D D^T + rho2 I)` turns every solve into one
//! application of `D D^T` followed by a tridiagonal solve with a factorisation that depends
//! only on `(N, rho1, rho2)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::problem::{psi_apply, psi_t_apply};

#[derive(Clone, Debug, PartialEq)]
pub struct ZetaSystem {
    rho1: f64,
    rho2: f64,
    /// LDL^T of the tridiagonal `T = rho1 D D^T + rho2 I`: pivots and unit sub-diagonal.
    pivots: Vec<f64>,
    lower: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("zeta system factorisation failed at row {row} (pivot {pivot})")]
pub struct FactorError {
    pub row: usize,
    pub pivot: f64,
}

impl ZetaSystem {
    pub fn new(n: usize, rho1: f64, rho2: f64) -> Result<Self, FactorError> {
        let mut pivots = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n.saturating_sub(1));
        let off = -rho1;
        for i in 0..n {
            let diag = rho1 * if i == 0 { 1.0 } else { 2.0 } + rho2;
            let pivot = if i == 0 {
                diag
            } else {
                let l = off / pivots[i - 1];
                lower.push(l);
                diag - l * off
            };
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(FactorError { row: i, pivot });
            }
            pivots.push(pivot);
        }
        Ok(Self { rho1, rho2, pivots, lower })
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    pub fn rho(&self) -> (f64, f64) {
        (self.rho1, self.rho2)
    }

    /// Solves `(rho1 I + rho2 Psi^T Psi) z = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(b.len(), n, "right-hand side length");
        if n == 0 {
            return Vec::new();
        }
        // w = D D^T b, with (D^T y)_i = y_i - y_{i+1} and (D x)_i = x_i - x_{i-1}
        let dt: Vec<f64> = (0..n).map(|i| b[i] - if i + 1 < n { b[i + 1] } else { 0.0 }).collect();
        let mut z: Vec<f64> = (0..n).map(|i| dt[i] - if i > 0 { dt[i - 1] } else { 0.0 }).collect();
        for i in 1..n {
            z[i] -= self.lower[i - 1] * z[i - 1];
        }
        for (zi, p) in z.iter_mut().zip(&self.pivots) {
            *zi /= p;
        }
        for i in (0..n - 1).rev() {
            z[i] -= self.lower[i] * z[i + 1];
        }
        z
    }

    /// `(rho1 I + rho2 Psi^T Psi) z` in O(N).
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let m = psi_t_apply(&psi_apply(z));
        z.iter().zip(m).map(|(zi, mi)| self.rho1 * zi + self.rho2 * mi).collect()
    }
}

type Key = (usize, u64, u64);

/// Factorisations keyed by `(N, rho1, rho2)`.
#[derive(Debug, Default)]
pub struct FactorCache {
    map: Mutex<HashMap<Key, Arc<ZetaSystem>>>,
}

impl FactorCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Process-wide cache.
    pub fn global() -> &'static FactorCache {
        static CACHE: OnceLock<FactorCache> = OnceLock::new();
        CACHE.get_or_init(FactorCache::new)
    }

    /// Returns the cached factorisation and whether it had to be computed.
    pub fn get(&self, n: usize, rho1: f64, rho2: f64) -> Result<(Arc<ZetaSystem>, bool), FactorError> {
        let key = (n, rho1.to_bits(), rho2.to_bits());
        if let Some(f) = self.map.lock().unwrap().get(&key) {
            return Ok((Arc::clone(f), false));
        }
        let f = Arc::new(ZetaSystem::new(n, rho1, rho2)?);
        self.map.lock().unwrap().insert(key, Arc::clone(&f));
        Ok((f, true))
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn dense(n: usize, rho1: f64, rho2: f64) -> DMatrix<f64> {
        let psi = DMatrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 });
        DMatrix::identity(n, n) * rho1 + psi.transpose() * &psi * rho2
    }

    #[test]
    fn matches_dense_cholesky() {
        for &(n, rho1, rho2) in &[(1, 1.0, 1.0), (5, 2.34e-4, 8.86e-9), (40, 1e-3, 1e-7), (200, 1e-5, 1e-9)] {
            let sys = ZetaSystem::new(n, rho1, rho2).unwrap();
            let b: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) as f64).sin() * 1e3).collect();
            let z = sys.solve(&b);
            let chol = dense(n, rho1, rho2).cholesky().unwrap();
            let zd = chol.solve(&DVector::from_vec(b.clone()));
            let scale = zd.amax();
            for i in 0..n {
                assert!((z[i] - zd[i]).abs() <= 1e-9 * scale, "n={n} i={i}: {} vs {}", z[i], zd[i]);
            }
        }
    }

    #[test]
    fn two_by_two_cramer() {
        // A = [[rho1 + 2 rho2, rho2], [rho2, rho1 + rho2]]
        let (rho1, rho2) = (3.0, 0.5);
        let (a, b, c, d) = (rho1 + 2.0 * rho2, rho2, rho2, rho1 + rho2);
        let rhs = [1.0, -2.0];
        let det = a * d - b * c;
        let expected = [(rhs[0] * d - b * rhs[1]) / det, (a * rhs[1] - c * rhs[0]) / det];
        let z = ZetaSystem::new(2, rho1, rho2).unwrap().solve(&rhs);
        assert!((z[0] - expected[0]).abs() < 1e-14);
        assert!((z[1] - expected[1]).abs() < 1e-14);
    }

    #[test]
    fn residual_small_on_long_horizon() {
        let n = 1875;
        let sys = ZetaSystem::new(n, 2.34e-4, 8.86e-9).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos() * 5.0 + 0.01 * i as f64).collect();
        let z = sys.solve(&b);
        let ab = sys.apply(&z);
        let res: f64 = ab.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(res <= 1e-10 * nb, "{res} vs {nb}");
    }

    #[test]
    fn zero_rho2_is_diagonal() {
        let sys = ZetaSystem::new(6, 0.5, 0.0).unwrap();
        let b = [1.0, 2.0, -3.0, 4.0, 0.0, 1.5];
        let z = sys.solve(&b);
        for i in 0..6 {
            assert!((z[i] - b[i] / 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn cache_reuses_factorisations() {
        let cache = FactorCache::new();
        let (a, fresh_a) = cache.get(10, 1e-4, 1e-8).unwrap();
        let (b, fresh_b) = cache.get(10, 1e-4, 1e-8).unwrap();
        assert!(fresh_a && !fresh_b);
        assert!(Arc::ptr_eq(&a, &b));
        cache.get(11, 1e-4, 1e-8).unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn invalid_rho_fails_once_at_setup() {
        assert!(ZetaSystem::new(4, -1.0, 1.0).is_err());
    }
}
