//! Closed-form evidence moments and posterior densities under the warped GP
//! with a diagonal Gaussian prior.
//!
//! With `k_i(x) = v N(x; X_i, W)` every integral below is a product of 1-d
//! Gaussian integrals, evaluated coordinate-wise in log space. The quantity
//! `G_ij = int k_i k_j pi dx = v^2 N(X_i; X_j, 2W) N((X_i+X_j)/2; mu, W/2 + S)`
//! appears in the mean, the variance and the posterior mixture.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BasqError, Result};
use crate::gaussian::{ln_normal_1d, DiagGaussian, GaussianMixture};
use crate::gp::WarpedGpModel;

/// Mean and variance of the evidence `Z = int l(x) pi(x) dx` under the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub mean: f64,
    pub variance: f64,
}

const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

fn check_prior(model: &WarpedGpModel, prior: &DiagGaussian) -> Result<()> {
    check_dim(model.dim(), prior.dim())
}

/// `G_ij` as described in the module docs.
pub(crate) fn pair_integrals(model: &WarpedGpModel, prior: &DiagGaussian) -> DMatrix<f64> {
    let n = model.len();
    let w = model.params().w_diag();
    let ln_v2 = 2.0 * model.params().ln_normalized_variance();
    let (mu, s) = (prior.mean(), prior.var_diag());
    let x = model.x();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (xi, xj) = (x.row(i), x.row(j));
            let mut ln = ln_v2;
            for k in 0..w.len() {
                ln += ln_normal_1d(xi[k], xj[k], 2.0 * w[k]);
                ln += ln_normal_1d(0.5 * (xi[k] + xj[k]), mu[k], 0.5 * w[k] + s[k]);
            }
            let val = ln.exp();
            g[(i, j)] = val;
            g[(j, i)] = val;
        }
    }
    g
}

/// `E[Z | y] = alpha + 1/2 omega^T G omega`.
pub fn evidence_mean(model: &WarpedGpModel, prior: &DiagGaussian) -> Result<f64> {
    check_prior(model, prior)?;
    let g = pair_integrals(model, prior);
    Ok(mean_from_pairs(model, &g))
}

fn mean_from_pairs(model: &WarpedGpModel, g: &DMatrix<f64>) -> f64 {
    let om = model.omega();
    model.alpha() + 0.5 * om.dot(&(g * om))
}

/// `ln int int pi(x) k_i(x) k(x, x') k_j(x') pi(x') dx dx'` per pair, without the `v^3` factor.
fn ln_first_term_integral(xi: &[f64], xj: &[f64], w: &[f64], mu: &[f64], s: &[f64]) -> f64 {
    let mut ln = 0.0;
    for k in 0..w.len() {
        let (a, b, wk, m, sk) = (xi[k], xj[k], w[k], mu[k], s[k]);
        let sw = sk + wk;
        let s1 = sk * wk / sw;
        let m1 = (m * wk + a * sk) / sw;
        let m2 = (m * wk + b * sk) / sw;
        ln += ln_normal_1d(a, m, sw) + ln_normal_1d(b, m, sw) + ln_normal_1d(m1, m2, 2.0 * s1 + wk);
    }
    ln
}

/// First variance term `int int pi m(x) K(x,x') m(x') pi`.
fn variance_first_term(model: &WarpedGpModel, prior: &DiagGaussian) -> f64 {
    let n = model.len();
    let w = model.params().w_diag();
    let ln_v3 = 3.0 * model.params().ln_normalized_variance();
    let om = model.omega();
    let x = model.x();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let t = (ln_v3 + ln_first_term_integral(x.row(i), x.row(j), &w, prior.mean(), prior.var_diag())).exp();
            let f = if i == j { 1.0 } else { 2.0 };
            total += f * om[i] * om[j] * t;
        }
    }
    total
}

/// Second variance term `b^T Omega b` with `b = G omega`, an O(n^2) contraction of
/// `sum_{ijkl} omega_i omega_j Omega_kl G_ik G_lj`.
fn variance_second_term(model: &WarpedGpModel, g: &DMatrix<f64>) -> f64 {
    let om = model.omega();
    let n = om.len();
    let b: Vec<f64> = (0..n)
        .map(|k| {
            let mut acc = NeumaierSum::default();
            for i in 0..n {
                acc.add(g[(k, i)] * om[i]);
            }
            acc.value()
        })
        .collect();
    let oi = model.omega_inv();
    let mut acc = NeumaierSum::default();
    for k in 0..n {
        for l in 0..n {
            acc.add(b[k] * oi[(k, l)] * b[l]);
        }
    }
    acc.value()
}

/// Compensated (Neumaier) summation.
#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, term: f64) {
        let t = self.sum + term;
        if self.sum.abs() >= term.abs() {
            self.comp += (self.sum - t) + term;
        } else {
            self.comp += (term - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Reference O(n^4) quadruple loop for the second variance term.
pub fn variance_second_term_naive(model: &WarpedGpModel, prior: &DiagGaussian) -> Result<f64> {
    check_prior(model, prior)?;
    let g = pair_integrals(model, prior);
    let (om, oi) = (model.omega(), model.omega_inv());
    let n = model.len();
    // the terms cancel heavily when the Gram matrix is ill-conditioned
    let mut acc = NeumaierSum::default();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    acc.add(om[i] * om[j] * oi[(k, l)] * g[(i, k)] * g[(l, j)]);
                }
            }
        }
    }
    Ok(acc.value())
}

/// Second variance term via the separable contraction (exposed for comparison with the naive loop).
pub fn variance_second_term_separable(model: &WarpedGpModel, prior: &DiagGaussian) -> Result<f64> {
    check_prior(model, prior)?;
    Ok(variance_second_term(model, &pair_integrals(model, prior)))
}

/// `Var[Z | y] = int int pi(x) C^L(x, x') pi(x') dx dx'`, clipped at zero.
pub fn evidence_variance(model: &WarpedGpModel, prior: &DiagGaussian) -> Result<f64> {
    check_prior(model, prior)?;
    let g = pair_integrals(model, prior);
    Ok(variance_from_pairs(model, prior, &g))
}

fn variance_from_pairs(model: &WarpedGpModel, prior: &DiagGaussian, g: &DMatrix<f64>) -> f64 {
    let first = variance_first_term(model, prior);
    let second = variance_second_term(model, g);
    let var = first - second;
    if var < -NEGATIVE_VARIANCE_TOL * first.abs().max(1.0) {
        log::warn!("evidence variance {var:e} is negative beyond tolerance; clipping");
    }
    var.max(0.0)
}

/// Evidence mean and variance sharing one pass over the pair integrals.
pub fn evidence(model: &WarpedGpModel, prior: &DiagGaussian) -> Result<EvidenceEstimate> {
    check_prior(model, prior)?;
    let g = pair_integrals(model, prior);
    Ok(EvidenceEstimate { mean: mean_from_pairs(model, &g), variance: variance_from_pairs(model, prior, &g) })
}

/// Expands the pointwise likelihood variance `m(x)^2 C(x, x)` as a signed Gaussian
/// mixture in `x` and evaluates it term by term. O(n^4) per point; reference only.
pub fn likelihood_variance_mixture_expansion(model: &WarpedGpModel, x: &[f64]) -> Result<f64> {
    check_dim(model.dim(), x.len())?;
    let n = model.len();
    let p = model.params();
    let w = p.w_diag();
    let ln_v = p.ln_normalized_variance();
    let xs = model.x();
    let (om, oi) = (model.omega(), model.omega_inv());
    let d = w.len();
    let ln_pair = |i: usize, j: usize| -> f64 {
        (0..d).map(|k| ln_normal_1d(xs.row(i)[k], xs.row(j)[k], 2.0 * w[k])).sum()
    };
    let mut first = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut ln = 2.0 * ln_v + ln_pair(i, j);
            for k in 0..d {
                ln += ln_normal_1d(x[k], 0.5 * (xs.row(i)[k] + xs.row(j)[k]), 0.5 * w[k]);
            }
            first += p.variance * om[i] * om[j] * ln.exp();
        }
    }
    let mut second = 0.0;
    for i in 0..n {
        for j in 0..n {
            for kk in 0..n {
                for l in 0..n {
                    let mut ln = 4.0 * ln_v + ln_pair(l, i) + ln_pair(kk, j);
                    for k in 0..d {
                        let (a, b, c, e) = (xs.row(i)[k], xs.row(j)[k], xs.row(kk)[k], xs.row(l)[k]);
                        ln += ln_normal_1d(0.5 * (c + b), 0.5 * (a + e), w[k]);
                        ln += ln_normal_1d(x[k], 0.25 * (a + b + c + e), 0.25 * w[k]);
                    }
                    second += om[i] * om[j] * oi[(kk, l)] * ln.exp();
                }
            }
        }
    }
    Ok(first - second)
}

/// Posterior `p(x) = m^L(x) pi(x) / E[Z | y]` together with its Gaussian-mixture form.
#[derive(Debug)]
pub struct PosteriorModel {
    model: WarpedGpModel,
    prior: DiagGaussian,
    evidence_mean: f64,
    mixture: OnceLock<GaussianMixture>,
}

impl PosteriorModel {
    pub fn new(model: WarpedGpModel, prior: DiagGaussian) -> Result<Self> {
        let evidence_mean = evidence_mean(&model, &prior)?;
        Self::with_evidence(model, prior, evidence_mean)
    }

    pub fn with_evidence(model: WarpedGpModel, prior: DiagGaussian, evidence_mean: f64) -> Result<Self> {
        check_prior(&model, &prior)?;
        if !(evidence_mean.is_finite() && evidence_mean > 0.0) {
            return Err(BasqError::NonPositiveEvidence(evidence_mean));
        }
        Ok(Self { model, prior, evidence_mean, mixture: OnceLock::new() })
    }

    pub fn model(&self) -> &WarpedGpModel {
        &self.model
    }

    pub fn prior(&self) -> &DiagGaussian {
        &self.prior
    }

    pub fn evidence_mean(&self) -> f64 {
        self.evidence_mean
    }

    /// Joint posterior density; nonnegative by construction of the warp.
    pub fn joint_density(&self, x: &[f64]) -> Result<f64> {
        let (ml, _) = self.model.predict_likelihood(x)?;
        Ok((ml * self.prior.pdf(x)? / self.evidence_mean).max(0.0))
    }

    /// The joint posterior as a mixture. Component 0 is the prior scaled by
    /// `alpha / E[Z]`; the rest are the symmetrized `(i, j)` products.
    pub fn mixture(&self) -> &GaussianMixture {
        self.mixture.get_or_init(|| self.build_mixture())
    }

    fn build_mixture(&self) -> GaussianMixture {
        let m = &self.model;
        let n = m.len();
        let g = pair_integrals(m, &self.prior);
        let w = m.params().w_diag();
        let (mu, s) = (self.prior.mean(), self.prior.var_diag());
        let var_p: Vec<f64> = w.iter().zip(s).map(|(wk, sk)| 1.0 / (2.0 / wk + 1.0 / sk)).collect();
        let om = m.omega();
        let x = m.x();
        let mut weights = Vec::with_capacity(1 + n * (n + 1) / 2);
        let mut comps = Vec::with_capacity(weights.capacity());
        weights.push(m.alpha() / self.evidence_mean);
        comps.push(self.prior.clone());
        for i in 0..n {
            for j in 0..=i {
                let f = if i == j { 0.5 } else { 1.0 };
                weights.push(f * om[i] * om[j] * g[(i, j)] / self.evidence_mean);
                let mean = (0..w.len())
                    .map(|k| var_p[k] * ((x.row(i)[k] + x.row(j)[k]) / w[k] + mu[k] / s[k]))
                    .collect();
                comps.push(DiagGaussian::new(mean, var_p.clone()).expect("positive variances"));
            }
        }
        GaussianMixture::new(weights, comps).expect("consistent mixture")
    }

    /// Closed-form integral of the posterior mixture (1 up to round-off).
    pub fn total_mass(&self) -> f64 {
        self.mixture().integral()
    }

    /// One-dimensional marginal along `dim`, as a signed 1-d mixture whose
    /// component 0 is the scaled prior marginal.
    pub fn marginal(&self, dim: usize) -> Result<GaussianMixture> {
        self.mixture().marginal(dim)
    }

    /// Conditional density of the single free coordinate given the others.
    pub fn conditional(&self, fixed_dims: &[usize], fixed_vals: &[f64]) -> Result<ConditionalPosterior> {
        let d = self.model.dim();
        if fixed_dims.len() != fixed_vals.len() {
            return Err(BasqError::InvalidArgument("fixed_dims and fixed_vals differ in length".into()));
        }
        if fixed_dims.len() + 1 != d {
            return Err(BasqError::InvalidArgument(format!(
                "conditioning needs exactly one free dimension; {} of {d} fixed",
                fixed_dims.len()
            )));
        }
        let mut is_fixed = vec![false; d];
        for &k in fixed_dims {
            if k >= d || is_fixed[k] {
                return Err(BasqError::InvalidArgument(format!("bad fixed dimension {k}")));
            }
            is_fixed[k] = true;
        }
        let free = is_fixed.iter().position(|f| !f).expect("one free dimension");
        let mix = self.mixture();
        // diagonal components factor across coordinates: conditioning only rescales weights
        let ln_slice: Vec<f64> = mix
            .components()
            .iter()
            .map(|c| {
                fixed_dims
                    .iter()
                    .zip(fixed_vals)
                    .map(|(&k, &v)| ln_normal_1d(v, c.mean()[k], c.var_diag()[k]))
                    .sum()
            })
            .collect();
        let shift = ln_slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(BasqError::ZeroDensitySlice);
        }
        let raw: Vec<f64> = mix.weights().iter().zip(&ln_slice).map(|(w, l)| w * (l - shift).exp()).collect();
        let total: f64 = raw.iter().sum();
        let scale: f64 = raw.iter().map(|r| r.abs()).sum();
        if !(total > 1e-14 * scale && total > 0.0) {
            return Err(BasqError::ZeroDensitySlice);
        }
        let comps = mix.components().iter().map(|c| c.marginal(free)).collect::<Result<Vec<_>>>()?;
        let weights = raw.into_iter().map(|r| r / total).collect();
        Ok(ConditionalPosterior { free_dim: free, mixture: GaussianMixture::new(weights, comps)? })
    }
}

/// Normalized 1-d conditional posterior.
#[derive(Debug, Clone)]
pub struct ConditionalPosterior {
    pub free_dim: usize,
    pub mixture: GaussianMixture,
}

impl ConditionalPosterior {
    pub fn density(&self, t: f64) -> f64 {
        self.mixture.density_unchecked(&[t]).max(0.0)
    }
}
