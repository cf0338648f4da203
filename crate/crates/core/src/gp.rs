//! Square-root warped Gaussian process over likelihood values.
//!
//! The latent GP models `g(x) = sqrt(2 (l(x) - alpha))` with an RBF kernel; the
//! likelihood surrogate is the linearised warp `alpha + g^2 / 2`.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BasqError, Result};
use crate::gaussian::LN_2PI;
use crate::optim::{minimize_bfgs, BfgsSettings, Objective};
use crate::points::{sq_dist, Points};

/// Squared-exponential kernel `v' exp(-1/2 sum_k (a_k - b_k)^2 / l_k^2)`.
///
/// Equivalently `v N(a; b, W)` with `W = diag(l^2)` and the normalized variance
/// `v = v' sqrt|2 pi W|`, which is the form the closed-form integrals use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfKernelParams {
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl RbfKernelParams {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(BasqError::InvalidArgument(format!("kernel variance {variance} must be positive")));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(BasqError::InvalidArgument(format!("lengthscale {l} must be positive")));
        }
        Ok(Self { variance, lengthscales })
    }

    pub fn isotropic(variance: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(variance, vec![lengthscale; dim])
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Diagonal of `W`, i.e. squared lengthscales.
    pub fn w_diag(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|l| l * l).collect()
    }

    /// `ln v = ln v' + 1/2 ln |2 pi W|`.
    pub fn ln_normalized_variance(&self) -> f64 {
        self.variance.ln() + self.lengthscales.iter().map(|l| 0.5 * LN_2PI + l.ln()).sum::<f64>()
    }

    pub fn normalized_variance(&self) -> f64 {
        self.ln_normalized_variance().exp()
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let z = (x - y) / l;
            s += z * z;
        }
        self.variance * (-0.5 * s).exp()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim(self.dim(), a.len())?;
        check_dim(self.dim(), b.len())?;
        Ok(self.eval_unchecked(a, b))
    }

    fn to_log(&self) -> Vec<f64> {
        std::iter::once(self.variance.ln()).chain(self.lengthscales.iter().map(|l| l.ln())).collect()
    }

    fn from_log(theta: &[f64]) -> Self {
        Self { variance: theta[0].exp(), lengthscales: theta[1..].iter().map(|t| t.exp()).collect() }
    }
}

/// Gram matrix `K[i][j] = k(A_i, B_j)`.
pub fn kernel_eval(params: &RbfKernelParams, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
    check_dim(params.dim(), a.dim())?;
    check_dim(params.dim(), b.dim())?;
    Ok(kernel_matrix(params, a, b))
}

pub(crate) fn kernel_matrix(params: &RbfKernelParams, a: &Points, b: &Points) -> DMatrix<f64> {
    let inv_l: Vec<f64> = params.lengthscales.iter().map(|l| 1.0 / l).collect();
    let mut k = DMatrix::zeros(a.len(), b.len());
    for (j, bj) in b.iter().enumerate() {
        let mut col = k.column_mut(j);
        for (ai, out) in a.iter().zip(col.iter_mut()) {
            let mut s = 0.0;
            for ((x, y), il) in ai.iter().zip(bj).zip(&inv_l) {
                let z = (x - y) * il;
                s += z * z;
            }
            *out = params.variance * (-0.5 * s).exp();
        }
    }
    k
}

/// How the warp offset is chosen from the observed likelihood values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaRule {
    /// `alpha = fraction * min(y)`.
    MinFraction(f64),
    Fixed(f64),
}

impl Default for AlphaRule {
    fn default() -> Self {
        AlphaRule::MinFraction(0.8)
    }
}

impl AlphaRule {
    pub fn alpha(&self, y: &[f64]) -> f64 {
        match *self {
            AlphaRule::MinFraction(f) => f * y.iter().copied().fold(f64::INFINITY, f64::min),
            AlphaRule::Fixed(a) => a,
        }
    }
}

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

/// Cholesky of `K + jitter I`, escalating the relative jitter by 10x from 1e-8 up to 1e-2.
pub(crate) fn factor_with_jitter(k: &DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    factor_with_jitter_upto(k, scale, JITTER_MAX)
}

fn factor_with_jitter_upto(k: &DMatrix<f64>, scale: f64, max_rel: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut rel = JITTER_START;
    loop {
        let jitter = rel * scale;
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = kj.cholesky() {
            return Ok((ch, jitter));
        }
        if rel >= max_rel * 0.999 {
            let diag = k.diagonal();
            let max = diag.iter().copied().fold(0.0, f64::max);
            return Err(BasqError::Factorization { jitter, condition: max / jitter });
        }
        rel *= 10.0;
    }
}

fn ln_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Removes rows closer than `tol` (Euclidean) to an earlier row. Returns kept indices.
pub(crate) fn dedup_indices(x: &Points, tol: f64) -> Vec<usize> {
    let tol2 = tol * tol;
    let mut kept: Vec<usize> = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        if !kept.iter().any(|&j| sq_dist(x.row(i), x.row(j)) <= tol2) {
            kept.push(i);
        }
    }
    kept
}

pub(crate) const DEDUP_TOL: f64 = 1e-10;

/// Fitted square-root warped GP.
#[derive(Debug, Clone)]
pub struct WarpedGpModel {
    x: Points,
    y: Vec<f64>,
    alpha: f64,
    y_warped: DVector<f64>,
    omega: DVector<f64>,
    omega_inv: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    params: RbfKernelParams,
    jitter: f64,
}

impl WarpedGpModel {
    /// Fits the warped GP. Near-duplicate rows of `x` are dropped (first occurrence kept).
    pub fn fit(x: &Points, y: &[f64], params: RbfKernelParams, alpha_rule: AlphaRule) -> Result<Self> {
        check_dim(params.dim(), x.dim())?;
        if x.len() != y.len() {
            return Err(BasqError::InvalidArgument(format!("{} points but {} values", x.len(), y.len())));
        }
        if x.is_empty() {
            return Err(BasqError::InvalidArgument("cannot fit a GP to zero observations".into()));
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(BasqError::BadLikelihood { value: *v, point: x.row(i).to_vec() });
        }
        let keep = dedup_indices(x, DEDUP_TOL);
        let (x, y) = if keep.len() < x.len() {
            (x.select(&keep), keep.iter().map(|&i| y[i]).collect::<Vec<_>>())
        } else {
            (x.clone(), y.to_vec())
        };
        let alpha = alpha_rule.alpha(&y);
        let y_warped = DVector::from_iterator(y.len(), y.iter().map(|v| (2.0 * (v - alpha)).max(0.0).sqrt()));
        let k = kernel_matrix(&params, &x, &x);
        let (chol, jitter) = factor_with_jitter(&k, params.variance)?;
        let omega = chol.solve(&y_warped);
        let omega_inv = chol.inverse();
        Ok(Self { x, y, alpha, y_warped, omega, omega_inv, chol, params, jitter })
    }

    /// Same data, new kernel parameters (warp offset kept).
    pub fn refit(&self, params: RbfKernelParams) -> Result<Self> {
        Self::fit(&self.x, &self.y, params, AlphaRule::Fixed(self.alpha))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn x(&self) -> &Points {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn y_warped(&self) -> &DVector<f64> {
        &self.y_warped
    }

    /// Woodbury vector `(K + jitter I)^-1 y_warped`.
    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    /// Inverse kernel matrix `(K + jitter I)^-1`.
    pub fn omega_inv(&self) -> &DMatrix<f64> {
        &self.omega_inv
    }

    pub fn params(&self) -> &RbfKernelParams {
        &self.params
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn k_vec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.x.iter().map(|xi| self.params.eval_unchecked(xi, x)))
    }

    /// Warped posterior mean and variance at `x`.
    pub fn predict_warped(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dim(), x.len())?;
        let k = self.k_vec(x);
        let m = k.dot(&self.omega);
        let z = self.chol.l_dirty().solve_lower_triangular(&k).unwrap_or_else(|| DVector::zeros(k.len()));
        let c = (self.params.variance - z.norm_squared()).max(0.0);
        Ok((m, c))
    }

    /// Warped posterior mean at `x` (cheaper than [`Self::predict_warped`]).
    pub fn mean_warped(&self, x: &[f64]) -> f64 {
        self.x.iter().zip(self.omega.iter()).map(|(xi, w)| w * self.params.eval_unchecked(xi, x)).sum()
    }

    /// Warped posterior mean and variance at many points.
    pub fn predict_warped_batch(&self, pts: &Points) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.dim(), pts.dim())?;
        let mut means = Vec::with_capacity(pts.len());
        let mut vars = Vec::with_capacity(pts.len());
        // chunked so the cross-kernel block stays small
        let idx: Vec<usize> = (0..pts.len()).collect();
        for block in idx.chunks(1024) {
            let kc = kernel_matrix(&self.params, &self.x, &pts.select(block));
            means.extend(kc.tr_mul(&self.omega).iter().copied());
            let ok = &self.omega_inv * &kc;
            for (a, b) in kc.column_iter().zip(ok.column_iter()) {
                vars.push((self.params.variance - a.dot(&b)).max(0.0));
            }
        }
        Ok((means, vars))
    }

    /// Warped posterior mean at many points.
    pub fn mean_warped_batch(&self, pts: &Points) -> Result<Vec<f64>> {
        check_dim(self.dim(), pts.dim())?;
        let mut means = Vec::with_capacity(pts.len());
        let idx: Vec<usize> = (0..pts.len()).collect();
        for block in idx.chunks(1024) {
            let kc = kernel_matrix(&self.params, &self.x, &pts.select(block));
            means.extend(kc.tr_mul(&self.omega).iter().copied());
        }
        Ok(means)
    }

    /// Posterior covariance of the warped GP between two point sets.
    pub fn warped_cov(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), a.dim())?;
        check_dim(self.dim(), b.dim())?;
        let mut za = kernel_matrix(&self.params, &self.x, a);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut za);
        let mut zb = kernel_matrix(&self.params, &self.x, b);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut zb);
        Ok(kernel_matrix(&self.params, a, b) - za.tr_mul(&zb))
    }

    /// Linearised likelihood mean `alpha + m^2/2` and variance `m^2 C`.
    pub fn predict_likelihood(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (m, c) = self.predict_warped(x)?;
        Ok((self.alpha + 0.5 * m * m, (m * m * c).max(0.0)))
    }

    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        log_marginal_likelihood(&self.x, self.y_warped.as_slice(), &self.params)
    }
}

/// GP log evidence of `targets` under a zero-mean RBF prior, with the jitter ladder.
pub fn log_marginal_likelihood(x: &Points, targets: &[f64], params: &RbfKernelParams) -> Result<f64> {
    lml_upto(x, targets, params, JITTER_MAX)
}

fn lml_upto(x: &Points, targets: &[f64], params: &RbfKernelParams, max_rel: f64) -> Result<f64> {
    check_dim(params.dim(), x.dim())?;
    let k = kernel_matrix(params, x, x);
    let (ch, _) = factor_with_jitter_upto(&k, params.variance, max_rel)?;
    let y = DVector::from_column_slice(targets);
    let a = ch.solve(&y);
    let n = targets.len() as f64;
    Ok(-0.5 * y.dot(&a) - 0.5 * ln_det(&ch) - 0.5 * n * LN_2PI)
}

/// Gradient of [`log_marginal_likelihood`] with respect to `(ln v', ln l_1, ..., ln l_d)`.
pub fn log_marginal_likelihood_grad(x: &Points, targets: &[f64], params: &RbfKernelParams) -> Result<(f64, Vec<f64>)> {
    lml_grad_upto(x, targets, params, JITTER_MAX)
}

fn lml_grad_upto(x: &Points, targets: &[f64], params: &RbfKernelParams, max_rel: f64) -> Result<(f64, Vec<f64>)> {
    check_dim(params.dim(), x.dim())?;
    let n = x.len();
    let k = kernel_matrix(params, x, x);
    let (ch, _) = factor_with_jitter_upto(&k, params.variance, max_rel)?;
    let y = DVector::from_column_slice(targets);
    let a = ch.solve(&y);
    let value = -0.5 * y.dot(&a) - 0.5 * ln_det(&ch) - 0.5 * n as f64 * LN_2PI;
    let kinv = ch.inverse();
    // jitter scales with v', so d(K + jI)/d ln v' = K + jI
    let mut grad = vec![0.0; params.dim() + 1];
    grad[0] = 0.5 * y.dot(&a) - 0.5 * n as f64;
    for (kd, l) in params.lengthscales.iter().enumerate() {
        let l2 = l * l;
        let mut g = 0.0;
        for j in 0..n {
            let xj = x.row(j)[kd];
            for i in 0..n {
                let d = x.row(i)[kd] - xj;
                g += (a[i] * a[j] - kinv[(i, j)]) * k[(i, j)] * d * d / l2;
            }
        }
        grad[kd + 1] = 0.5 * g;
    }
    Ok((value, grad))
}

/// Settings for type-II maximum likelihood over the kernel hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperoptConfig {
    /// Number of local searches; the first starts from the current parameters,
    /// the rest from log-uniform perturbations within x/÷ `restart_spread`.
    pub restarts: usize,
    pub restart_spread: f64,
    /// Cap on objective evaluations across all searches of one call.
    pub max_evals: usize,
    pub lengthscale_bounds: (f64, f64),
    pub variance_bounds: (f64, f64),
    /// Candidates whose Gram matrix needs a jitter above this fraction of the
    /// mean squared target are rejected, so jitter cannot act as observation noise.
    pub max_jitter: f64,
}

impl Default for HyperoptConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            restart_spread: 10.0,
            max_evals: 200,
            lengthscale_bounds: (1e-3, 1e3),
            variance_bounds: (1e-8, 1e10),
            max_jitter: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperoptOutcome {
    pub params: RbfKernelParams,
    pub objective: f64,
    /// Set when every local search failed and the input parameters were returned.
    pub failed: bool,
}

struct NegLml<'a> {
    x: &'a Points,
    targets: &'a [f64],
    /// Absolute jitter cap.
    max_jitter: f64,
    evals: usize,
}

impl NegLml<'_> {
    fn jitter_cap(&self, theta: &[f64]) -> Option<f64> {
        let rel = (self.max_jitter / theta[0].exp()).min(JITTER_MAX);
        (rel >= JITTER_START).then_some(rel)
    }
}

impl Objective for NegLml<'_> {
    fn value(&mut self, theta: &[f64]) -> Option<f64> {
        self.evals += 1;
        lml_upto(self.x, self.targets, &RbfKernelParams::from_log(theta), self.jitter_cap(theta)?).ok().map(|v| -v)
    }

    fn value_and_grad(&mut self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evals += 1;
        let (v, g) = lml_grad_upto(self.x, self.targets, &RbfKernelParams::from_log(theta), self.jitter_cap(theta)?).ok()?;
        Some((-v, g.into_iter().map(|gi| -gi).collect()))
    }
}

/// Maximizes the GP log evidence of `targets` in log-parameter space.
/// The result is never worse than `init`.
pub fn optimize_params<R: Rng + ?Sized>(
    x: &Points,
    targets: &[f64],
    init: &RbfKernelParams,
    cfg: &HyperoptConfig,
    rng: &mut R,
) -> HyperoptOutcome {
    let base = log_marginal_likelihood(x, targets, init).unwrap_or(f64::NEG_INFINITY);
    let mut best = HyperoptOutcome { params: init.clone(), objective: base, failed: false };
    if cfg.restarts == 0 || x.len() < 2 {
        return best;
    }
    let d = init.dim();
    let mut lower = vec![cfg.variance_bounds.0.ln()];
    let mut upper = vec![cfg.variance_bounds.1.ln()];
    lower.extend(std::iter::repeat_n(cfg.lengthscale_bounds.0.ln(), d));
    upper.extend(std::iter::repeat_n(cfg.lengthscale_bounds.1.ln(), d));
    let theta0 = init.to_log();
    let spread = cfg.restart_spread.ln();
    let starts: Vec<Vec<f64>> = (0..cfg.restarts)
        .map(|r| {
            if r == 0 {
                theta0.clone()
            } else {
                theta0.iter().map(|t| t + rng.random_range(-spread..=spread)).collect()
            }
        })
        .collect();

    let scale = targets.iter().map(|t| t * t).sum::<f64>() / targets.len() as f64;
    let mut obj = NegLml { x, targets, max_jitter: cfg.max_jitter * scale.max(f64::MIN_POSITIVE), evals: 0 };
    let mut any_ok = false;
    for start in starts {
        let remaining = cfg.max_evals.saturating_sub(obj.evals);
        if remaining < 2 {
            break;
        }
        let settings = BfgsSettings { max_evals: remaining, ..Default::default() };
        if let Some(m) = minimize_bfgs(&mut obj, &start, &lower, &upper, &settings) {
            any_ok = true;
            let lml = -m.value;
            if lml > best.objective {
                best = HyperoptOutcome { params: RbfKernelParams::from_log(&m.x), objective: lml, failed: false };
            }
        }
    }
    if !any_ok {
        warn!("hyperparameter optimization failed for every start; keeping current parameters");
        best.failed = true;
    }
    best
}

/// Type-II maximum likelihood for a fitted model's kernel, on its warped targets.
pub fn optimize_hypers<R: Rng + ?Sized>(model: &WarpedGpModel, cfg: &HyperoptConfig, rng: &mut R) -> HyperoptOutcome {
    optimize_params(&model.x, model.y_warped.as_slice(), &model.params, cfg, rng)
}
