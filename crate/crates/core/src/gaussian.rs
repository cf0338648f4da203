//! Diagonal-covariance Gaussian identities and signed Gaussian mixtures.
//!
//! Every closed form in the engine (evidence moments, posterior mixtures, the
//! acquisition mixture) reduces to products and integrals of diagonal normals,
//! so everything here works one coordinate at a time and accumulates in log space.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BasqError, Result};
use crate::points::Points;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log density of the scalar normal `N(x; mean, var)`.
#[inline]
pub(crate) fn ln_normal_1d(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Normal distribution with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), var.len())?;
        if let Some(&v) = var.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(BasqError::NonPositiveVariance(v));
        }
        Ok(Self { mean, var })
    }

    /// Isotropic Gaussian `N(mean, var * I)`.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, vec![var; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var_diag(&self) -> &[f64] {
        &self.var
    }

    pub fn ln_pdf(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.ln_pdf_unchecked(x))
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.ln_pdf(x).map(f64::exp)
    }

    #[inline]
    pub(crate) fn ln_pdf_unchecked(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((&xi, &m), &v)| ln_normal_1d(xi, m, v))
            .sum()
    }

    /// Draws one point using the caller's RNG.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        for (m, v) in self.mean.iter().zip(&self.var) {
            let z: f64 = rng.sample(StandardNormal);
            out.push(m + v.sqrt() * z);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Points {
        let mut buf = Vec::with_capacity(count * self.dim());
        for _ in 0..count {
            self.sample_into(rng, &mut buf);
        }
        Points::from_flat(self.dim().max(1), buf).unwrap_or_else(|_| Points::new(self.dim()))
    }

    /// One-dimensional marginal along coordinate `dim`.
    pub fn marginal(&self, dim: usize) -> Result<DiagGaussian> {
        if dim >= self.dim() {
            return Err(BasqError::InvalidArgument(format!(
                "dimension index {dim} out of range for d={}",
                self.dim()
            )));
        }
        DiagGaussian::new(vec![self.mean[dim]], vec![self.var[dim]])
    }
}

/// `log N(x; g.mean, diag(g.var))`.
pub fn normal_log_pdf(x: &[f64], g: &DiagGaussian) -> Result<f64> {
    g.ln_pdf(x)
}

/// Product of two diagonal Gaussian densities in log form:
/// `N(x; m1, S1) N(x; m2, S2) = exp(ln_scale) N(x; mc, Sc)` with
/// `ln_scale = ln N(m1; m2, S1 + S2)` and `Sc^-1 = S1^-1 + S2^-1`.
pub fn product_pair_ln(g1: &DiagGaussian, g2: &DiagGaussian) -> Result<(f64, DiagGaussian)> {
    check_dim(g1.dim(), g2.dim())?;
    let d = g1.dim();
    let mut mean = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    let mut ln_scale = 0.0;
    for k in 0..d {
        let (m1, v1, m2, v2) = (g1.mean[k], g1.var[k], g2.mean[k], g2.var[k]);
        ln_scale += ln_normal_1d(m1, m2, v1 + v2);
        let vc = v1 * v2 / (v1 + v2);
        var.push(vc);
        mean.push(vc * (m1 / v1 + m2 / v2));
    }
    Ok((ln_scale, DiagGaussian { mean, var }))
}

/// Product of two diagonal Gaussian densities; returns `(scale, result)`.
pub fn product_pair(g1: &DiagGaussian, g2: &DiagGaussian) -> Result<(f64, DiagGaussian)> {
    product_pair_ln(g1, g2).map(|(s, g)| (s.exp(), g))
}

/// Weighted sum of diagonal Gaussians. Weights may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<DiagGaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(BasqError::InvalidArgument(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(BasqError::InvalidArgument(format!("mixture weight {w} is not finite")));
        }
        if let Some(first) = components.first() {
            for c in &components[1..] {
                check_dim(first.dim(), c.dim())?;
            }
        }
        Ok(Self { weights, components })
    }

    pub fn single(g: DiagGaussian) -> Self {
        Self { weights: vec![1.0], components: vec![g] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, DiagGaussian::dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    /// Closed-form integral of the mixture density.
    pub fn integral(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.density_unchecked(x))
    }

    pub(crate) fn density_unchecked(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.ln_pdf_unchecked(x).exp())
            .sum()
    }

    /// Density at every row of `pts`, with per-component constants hoisted.
    pub fn density_batch(&self, pts: &Points) -> Result<Vec<f64>> {
        if pts.is_empty() {
            return Ok(Vec::new());
        }
        check_dim(self.dim(), pts.dim())?;
        let d = self.dim();
        let mut ln_norm = Vec::with_capacity(self.len());
        let mut prec = Vec::with_capacity(self.len() * d);
        for c in &self.components {
            ln_norm.push(-0.5 * c.var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>());
            prec.extend(c.var.iter().map(|v| 1.0 / v));
        }
        let out = pts
            .iter()
            .map(|x| {
                let mut acc = 0.0;
                for (k, c) in self.components.iter().enumerate() {
                    let w = self.weights[k];
                    if w == 0.0 {
                        continue;
                    }
                    let p = &prec[k * d..(k + 1) * d];
                    let mut q = 0.0;
                    for ((xi, m), pi) in x.iter().zip(&c.mean).zip(p) {
                        let z = xi - m;
                        q += z * z * pi;
                    }
                    acc += w * (ln_norm[k] - 0.5 * q).exp();
                }
                acc
            })
            .collect();
        Ok(out)
    }

    /// One-dimensional marginal mixture along coordinate `dim`.
    pub fn marginal(&self, dim: usize) -> Result<GaussianMixture> {
        let comps = self
            .components
            .iter()
            .map(|c| c.marginal(dim))
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(self.weights.clone(), comps)
    }

    /// Draws `count` i.i.d. points: component index from the normalized weights,
    /// then a normal draw from that component.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Points> {
        if let Some((index, &weight)) = self.weights.iter().enumerate().find(|(_, w)| **w < 0.0) {
            return Err(BasqError::NegativeWeight { index, weight });
        }
        let picker = WeightedIndex::new(&self.weights)
            .map_err(|e| BasqError::InvalidArgument(format!("mixture weights unusable: {e}")))?;
        let d = self.dim();
        let mut buf = Vec::with_capacity(count * d);
        for _ in 0..count {
            let k = picker.sample(rng);
            self.components[k].sample_into(rng, &mut buf);
        }
        Points::from_flat(d, buf)
    }
}

/// `sum_k w_k N(x; mu_k, Sigma_k)`, possibly negative for signed mixtures.
pub fn mixture_density(mix: &GaussianMixture, x: &[f64]) -> Result<f64> {
    mix.density(x)
}

/// Samples from a nonnegative mixture; see [`GaussianMixture::sample`].
pub fn mixture_sample<R: Rng + ?Sized>(mix: &GaussianMixture, count: usize, rng: &mut R) -> Result<Points> {
    mix.sample(count, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(mean: &[f64], var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), var.to_vec()).unwrap()
    }

    fn pdf_1d(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    #[test]
    fn standard_normal_at_mode() {
        let lp = normal_log_pdf(&[0.0], &g(&[0.0], &[1.0])).unwrap();
        assert!((lp - 0.398_942_280_4_f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn log_pdf_at_mean_is_normalizer() {
        let var = [0.3, 2.0, 5.5, 1.1];
        let gg = g(&[1.0, -2.0, 0.5, 3.0], &var);
        let expected: f64 = var.iter().map(|v| -0.5 * (2.0 * std::f64::consts::PI * v).ln()).sum();
        assert!((normal_log_pdf(&[1.0, -2.0, 0.5, 3.0], &gg).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn log_pdf_matches_product_of_1d_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..3.0)).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let oracle: f64 = (0..3).map(|k| pdf_1d(x[k], m[k], v[k])).product();
            let got = normal_log_pdf(&x, &g(&m, &v)).unwrap().exp();
            assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        }
    }

    #[test]
    fn errors_on_bad_inputs() {
        assert!(matches!(
            normal_log_pdf(&[0.0, 1.0], &g(&[0.0], &[1.0])),
            Err(BasqError::DimensionMismatch { .. })
        ));
        assert!(matches!(DiagGaussian::new(vec![0.0], vec![0.0]), Err(BasqError::NonPositiveVariance(_))));
        assert!(product_pair(&g(&[0.0], &[1.0]), &g(&[0.0, 0.0], &[1.0, 1.0])).is_err());
    }

    #[test]
    fn symmetric_product() {
        let (scale, r) = product_pair(&g(&[0.0], &[1.0]), &g(&[0.0], &[1.0])).unwrap();
        assert!((scale - 0.282_094_791_8).abs() < 1e-10);
        assert!(r.mean()[0].abs() < 1e-15);
        assert!((r.var_diag()[0] - 0.5).abs() < 1e-15);

        let a = g(&[0.7, -1.2], &[0.4, 2.5]);
        let (s, _) = product_pair(&a, &a).unwrap();
        let expected = g(&[0.7, -1.2], &[0.8, 5.0]).pdf(&[0.7, -1.2]).unwrap();
        assert!((s - expected).abs() < 1e-14);
    }

    #[test]
    fn product_identity_pointwise_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = g(&[0.3, -0.8], &[0.7, 1.9]);
        let b = g(&[-1.1, 0.4], &[2.2, 0.35]);
        let (s, c) = product_pair(&a, &b).unwrap();
        for _ in 0..100 {
            let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let lhs = pdf_1d(x[0], 0.3, 0.7) * pdf_1d(x[1], -0.8, 1.9) * pdf_1d(x[0], -1.1, 2.2) * pdf_1d(x[1], 0.4, 0.35);
            let rhs = s * c.pdf(&x).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-300), "{lhs} {rhs}");
        }
    }

    #[test]
    fn mixture_single_and_cancelling() {
        let a = g(&[0.5], &[2.0]);
        let single = GaussianMixture::single(a.clone());
        assert!((single.density(&[1.3]).unwrap() - a.pdf(&[1.3]).unwrap()).abs() < 1e-15);

        let cancel = GaussianMixture::new(vec![1.0, -1.0], vec![a.clone(), a]).unwrap();
        for x in [-3.0, 0.0, 0.5, 7.0] {
            assert_eq!(cancel.density(&[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn signed_mixture_matches_termwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let comps: Vec<_> = (0..5)
            .map(|_| {
                g(
                    &[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    &[rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)],
                )
            })
            .collect();
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix = GaussianMixture::new(w.clone(), comps.clone()).unwrap();
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let oracle: f64 = (0..5)
                .map(|k| {
                    let (m, v) = (comps[k].mean(), comps[k].var_diag());
                    w[k] * pdf_1d(x[0], m[0], v[0]) * pdf_1d(x[1], m[1], v[1])
                })
                .sum();
            assert!((mix.density(&x).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_rejects_negative_weights() {
        let a = g(&[0.0], &[1.0]);
        let mix = GaussianMixture::new(vec![1.0, -0.2], vec![a.clone(), a]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(mix.sample(10, &mut rng), Err(BasqError::NegativeWeight { index: 1, .. })));
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let mix = GaussianMixture::single(g(&[1.5, -0.5], &[2.0, 0.5]));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let pts = mix.sample(n, &mut rng).unwrap();
        for (k, (m, v)) in [(1.5, 2.0f64), (-0.5, 0.5f64)].into_iter().enumerate() {
            let mean = pts.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            assert!((mean - m).abs() < 4.0 * v.sqrt() / (n as f64).sqrt());
        }
    }

    #[test]
    fn zero_weight_component_never_drawn() {
        let mix = GaussianMixture::new(vec![1.0, 0.0], vec![g(&[-50.0], &[1.0]), g(&[50.0], &[1.0])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(mix.sample(5000, &mut rng).unwrap().iter().all(|p| p[0] < 0.0));
    }

    #[test]
    fn component_fractions_follow_weights() {
        let mix = GaussianMixture::new(vec![0.3, 0.7], vec![g(&[-10.0], &[1.0]), g(&[10.0], &[1.0])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = mix.sample(10_000, &mut rng).unwrap();
        let frac = pts.iter().filter(|p| p[0] < 0.0).count() as f64 / 10_000.0;
        assert!((frac - 0.3).abs() < 0.02, "{frac}");
    }
}
