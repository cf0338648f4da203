//! Spectral test functions from a Nyström approximation of a kernel.
//!
//! With landmarks `X` and the eigendecomposition `K(X, X) = sum_i l_i u_i u_i^T`,
//! the test functions are `phi_i(x) = u_i^T K(X, x)` and the low-rank kernel is
//! `K0(x, y) = sum_i phi_i(x) phi_i(y) / l_i`.

use log::debug;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dim, BasqError, Result};
use crate::gp::{kernel_eval, RbfKernelParams, WarpedGpModel};
use crate::points::Points;

/// Eigenvalues at or below `l_1 * EIG_FLOOR` are discarded.
pub const EIG_FLOOR: f64 = 1e-12;

/// Positive semi-definite kernel over point sets.
pub trait Kernel: Sync {
    fn dim(&self) -> usize;
    fn matrix(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>>;
    fn diag(&self, a: &Points) -> Result<Vec<f64>>;
}

impl Kernel for RbfKernelParams {
    fn dim(&self) -> usize {
        RbfKernelParams::dim(self)
    }

    fn matrix(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        kernel_eval(self, a, b)
    }

    fn diag(&self, a: &Points) -> Result<Vec<f64>> {
        check_dim(RbfKernelParams::dim(self), a.dim())?;
        Ok(vec![self.variance; a.len()])
    }
}

/// Posterior covariance of a fitted warped GP, used as a kernel.
#[derive(Debug, Clone, Copy)]
pub struct WarpedCovariance<'a>(pub &'a WarpedGpModel);

impl Kernel for WarpedCovariance<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn matrix(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        self.0.warped_cov(a, b)
    }

    fn diag(&self, a: &Points) -> Result<Vec<f64>> {
        Ok(self.0.predict_warped_batch(a)?.1)
    }
}

#[derive(Debug, Clone)]
pub struct NystromBasis {
    landmarks: Points,
    eigvals: Vec<f64>,
    /// Columns are the kept eigenvectors.
    eigvecs: DMatrix<f64>,
}

impl NystromBasis {
    /// Keeps the top `n_test` eigenpairs of `K(landmarks, landmarks)` above the floor.
    pub fn build<K: Kernel + ?Sized>(kernel: &K, landmarks: Points, n_test: usize) -> Result<Self> {
        check_dim(kernel.dim(), landmarks.dim())?;
        if landmarks.len() < n_test {
            return Err(BasqError::TooFewPoints { needed: n_test, got: landmarks.len() });
        }
        let m = landmarks.len();
        let mut gram = kernel.matrix(&landmarks, &landmarks)?;
        // symmetrize away rounding in the cross-covariance path
        for i in 0..m {
            for j in 0..i {
                let v = 0.5 * (gram[(i, j)] + gram[(j, i)]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
        let kept: Vec<usize> = if top > 0.0 {
            order.into_iter().take(n_test).take_while(|&i| eig.eigenvalues[i] > top * EIG_FLOOR).collect()
        } else {
            Vec::new()
        };
        if kept.len() < n_test {
            debug!("Nyström basis truncated to {} of {} test functions", kept.len(), n_test);
        }
        let eigvals = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigvecs = DMatrix::from_fn(m, kept.len(), |r, c| eig.eigenvectors[(r, kept[c])]);
        Ok(Self { landmarks, eigvals, eigvecs })
    }

    pub fn len(&self) -> usize {
        self.eigvals.len()
    }

    /// True when the spectrum collapsed entirely (e.g. a zero kernel).
    pub fn is_empty(&self) -> bool {
        self.eigvals.is_empty()
    }

    pub fn landmarks(&self) -> &Points {
        &self.landmarks
    }

    /// Descending eigenvalues of the kept pairs.
    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// Test functions at `x`, one row per function and one column per point.
    pub fn eval_test_functions<K: Kernel + ?Sized>(&self, kernel: &K, x: &Points) -> Result<DMatrix<f64>> {
        check_dim(self.landmarks.dim(), x.dim())?;
        if self.is_empty() {
            return Ok(DMatrix::zeros(0, x.len()));
        }
        let kx = kernel.matrix(&self.landmarks, x)?;
        Ok(self.eigvecs.tr_mul(&kx))
    }

    /// Low-rank kernel `K0(a, b)`.
    pub fn approx_kernel<K: Kernel + ?Sized>(&self, kernel: &K, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        let pa = self.eval_test_functions(kernel, a)?;
        let pb = self.eval_test_functions(kernel, b)?;
        let mut scaled = pa;
        for (i, lam) in self.eigvals.iter().enumerate() {
            scaled.row_mut(i).scale_mut(1.0 / lam);
        }
        Ok(scaled.tr_mul(&pb))
    }

    /// `K(x, x) - K0(x, x)` without clipping.
    pub fn residual_diag<K: Kernel + ?Sized>(&self, kernel: &K, x: &Points) -> Result<Vec<f64>> {
        let phi = self.eval_test_functions(kernel, x)?;
        let kd = kernel.diag(x)?;
        Ok(kd
            .iter()
            .enumerate()
            .map(|(j, k)| k - (0..self.len()).map(|i| phi[(i, j)] * phi[(i, j)] / self.eigvals[i]).sum::<f64>())
            .collect())
    }

    /// `sqrt(max(K(x, x) - K0(x, x), 0))`.
    pub fn residual_sqrt_diag<K: Kernel + ?Sized>(&self, kernel: &K, x: &Points) -> Result<Vec<f64>> {
        Ok(self.residual_diag(kernel, x)?.into_iter().map(|r| r.max(0.0).sqrt()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::AlphaRule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(seed: u64, n: usize, d: usize, spread: f64) -> Points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Points::from_flat(d, (0..n * d).map(|_| rng.random_range(-spread..spread)).collect()).unwrap()
    }

    struct ZeroKernel;

    impl Kernel for ZeroKernel {
        fn dim(&self) -> usize {
            1
        }
        fn matrix(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
            Ok(DMatrix::zeros(a.len(), b.len()))
        }
        fn diag(&self, a: &Points) -> Result<Vec<f64>> {
            Ok(vec![0.0; a.len()])
        }
    }

    #[test]
    fn exact_on_landmarks_when_full_rank() {
        let k = RbfKernelParams::new(1.3, vec![0.9, 1.1]).unwrap();
        let x = random_points(1, 12, 2, 3.0);
        let basis = NystromBasis::build(&k, x.clone(), 12).unwrap();
        assert_eq!(basis.len(), 12);
        let diff = basis.approx_kernel(&k, &x, &x).unwrap() - k.matrix(&x, &x).unwrap();
        assert!(diff.amax() < 1e-6);
        for r in basis.residual_sqrt_diag(&k, &x).unwrap() {
            assert!(r < 1e-6);
        }
    }

    #[test]
    fn zero_kernel_gives_empty_basis() {
        let x = random_points(2, 5, 1, 1.0);
        let basis = NystromBasis::build(&ZeroKernel, x.clone(), 3).unwrap();
        assert!(basis.is_empty());
        assert_eq!(basis.eval_test_functions(&ZeroKernel, &x).unwrap().nrows(), 0);
    }

    #[test]
    fn too_few_landmarks_rejected() {
        let k = RbfKernelParams::isotropic(1.0, 1.0, 1).unwrap();
        assert!(NystromBasis::build(&k, random_points(0, 3, 1, 1.0), 4).is_err());
    }

    #[test]
    fn residual_nonnegative_at_landmarks() {
        let k = RbfKernelParams::isotropic(2.0, 1.5, 2).unwrap();
        let x = random_points(3, 200, 2, 3.0);
        let basis = NystromBasis::build(&k, x.clone(), 99).unwrap();
        let kd = k.diag(&x).unwrap();
        for (r, kk) in basis.residual_diag(&k, &x).unwrap().iter().zip(kd) {
            assert!(*r >= -1e-8 * kk);
        }
    }

    #[test]
    fn eigen_structure() {
        let k = RbfKernelParams::isotropic(1.0, 0.7, 2).unwrap();
        let basis = NystromBasis::build(&k, random_points(4, 60, 2, 2.0), 20).unwrap();
        assert!(basis.eigvals().windows(2).all(|w| w[0] >= w[1]));
        let gram = basis.eigvecs().tr_mul(basis.eigvecs());
        assert!((gram - DMatrix::identity(basis.len(), basis.len())).amax() < 1e-8);
    }

    #[test]
    fn test_functions_match_naive() {
        let k = RbfKernelParams::new(1.0, vec![0.8, 1.4]).unwrap();
        let basis = NystromBasis::build(&k, random_points(5, 40, 2, 2.0), 10).unwrap();
        let x = random_points(6, 7, 2, 3.0);
        let phi = basis.eval_test_functions(&k, &x).unwrap();
        for i in 0..basis.len() {
            for j in 0..x.len() {
                let naive: f64 = basis
                    .landmarks()
                    .iter()
                    .enumerate()
                    .map(|(m, lm)| basis.eigvecs()[(m, i)] * k.eval(lm, x.row(j)).unwrap())
                    .sum();
                assert!((phi[(i, j)] - naive).abs() < 1e-10);
            }
        }
        let single = basis.eval_test_functions(&k, &x.select(&[0])).unwrap();
        assert_eq!(single.shape(), (10, 1));
    }

    #[test]
    fn far_point_residual_is_full_variance() {
        let k = RbfKernelParams::isotropic(2.0, 0.5, 1).unwrap();
        let basis = NystromBasis::build(&k, random_points(7, 30, 1, 1.0), 10).unwrap();
        let far = Points::from_flat(1, vec![50.0]).unwrap();
        let r = basis.residual_sqrt_diag(&k, &far).unwrap()[0];
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn residual_trace_shrinks_with_basis_size() {
        let k = RbfKernelParams::isotropic(1.0, 1.0, 2).unwrap();
        let lm = random_points(8, 120, 2, 2.5);
        let probe = random_points(9, 300, 2, 2.5);
        let mut last = f64::INFINITY;
        for n in [1, 2, 4, 8, 16, 32, 64] {
            let basis = NystromBasis::build(&k, lm.clone(), n).unwrap();
            let tr: f64 = basis.residual_diag(&k, &probe).unwrap().iter().sum();
            assert!(tr <= last + 1e-9, "n={n}: {tr} > {last}");
            last = tr;
        }
    }

    #[test]
    fn warped_covariance_kernel_is_consistent() {
        let x = random_points(10, 6, 2, 2.0);
        let y: Vec<f64> = (0..6).map(|i| 0.5 + i as f64 * 0.3).collect();
        let m = WarpedGpModel::fit(&x, &y, RbfKernelParams::isotropic(1.0, 1.0, 2).unwrap(), AlphaRule::default()).unwrap();
        let kern = WarpedCovariance(&m);
        let probe = random_points(11, 9, 2, 3.0);
        let full = kern.matrix(&probe, &probe).unwrap();
        for (j, d) in kern.diag(&probe).unwrap().iter().enumerate() {
            assert!((full[(j, j)].max(0.0) - d).abs() < 1e-9);
        }
    }
}
