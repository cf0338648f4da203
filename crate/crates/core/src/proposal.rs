//! Proposal distributions for choosing recombination candidates.
//!
//! The distribution of interest is `f(x) = |m(x)| pi(x)` (with `m` the warped GP
//! mean), and the acquisition density under the same factorisation is
//! `p_A(x) ∝ C(x, x) pi(x)` with `C` the warped GP variance. Both are signed
//! Gaussian mixtures in closed form; they are sampled by drawing from a
//! nonnegative envelope mixture, reweighting by the exact density and
//! resampling (sequential Monte Carlo correction).

use log::{debug, warn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BasqError, Result};
use crate::gaussian::{ln_normal_1d, DiagGaussian, GaussianMixture};
use crate::gp::WarpedGpModel;
use crate::points::{Points, WeightedPointSet};
use crate::quadrature::pair_integrals;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    /// Mixture of the distribution of interest and the acquisition density.
    Ivr,
    /// Mixture of the distribution of interest and Gaussians around observations with `y > 0`.
    Igb,
    /// Pure acquisition density.
    Ub,
}

impl std::str::FromStr for ProposalKind {
    type Err = BasqError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ivr" => Ok(Self::Ivr),
            "igb" => Ok(Self::Igb),
            "ub" => Ok(Self::Ub),
            other => Err(BasqError::InvalidArgument(format!("unknown proposal kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub kind: ProposalKind,
    /// Fraction of samples drawn from the uncertainty component.
    pub r: f64,
    /// Number of weighted samples handed to recombination.
    pub n_samples: usize,
    /// SMC candidates per accepted sample.
    pub supersample_ratio: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { kind: ProposalKind::Ivr, r: 0.5, n_samples: 20_000, supersample_ratio: 100 }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(BasqError::InvalidArgument(format!("partition ratio r={} outside [0, 1]", self.r)));
        }
        if self.n_samples == 0 || self.supersample_ratio == 0 {
            return Err(BasqError::InvalidArgument("sample count and supersample ratio must be positive".into()));
        }
        Ok(())
    }

    /// UB always samples purely from the acquisition density.
    pub fn effective_r(&self) -> f64 {
        match self.kind {
            ProposalKind::Ub => 1.0,
            _ => self.r,
        }
    }

    /// `(from f, from the uncertainty component)`; the first is `floor((1 - r) N)`.
    pub fn split(&self) -> (usize, usize) {
        let n_f = ((1.0 - self.effective_r()) * self.n_samples as f64).floor() as usize;
        let n_f = n_f.min(self.n_samples);
        (n_f, self.n_samples - n_f)
    }
}

/// `|m(x)| pi(x)`; the prior alone before any data exist.
pub fn f_density(model: Option<&WarpedGpModel>, prior: &DiagGaussian, x: &[f64]) -> Result<f64> {
    check_dim(prior.dim(), x.len())?;
    let pi = prior.pdf(x)?;
    Ok(match model {
        None => pi,
        Some(m) => {
            check_dim(m.dim(), x.len())?;
            m.mean_warped(x).abs() * pi
        }
    })
}

fn f_density_batch(model: Option<&WarpedGpModel>, prior: &DiagGaussian, pts: &Points) -> Result<Vec<f64>> {
    let pis: Vec<f64> = pts.iter().map(|x| prior.ln_pdf_unchecked(x).exp()).collect();
    Ok(match model {
        None => pis,
        Some(m) => m.mean_warped_batch(pts)?.into_iter().zip(pis).map(|(mt, p)| mt.abs() * p).collect(),
    })
}

/// Nonnegative envelope `sum_i |omega_i| k_i(x) pi(x) >= |m(x)| pi(x)`, normalized.
fn f_envelope(model: &WarpedGpModel, prior: &DiagGaussian) -> Option<GaussianMixture> {
    let w = model.params().w_diag();
    let (mu, s) = (prior.mean(), prior.var_diag());
    let ln_v = model.params().ln_normalized_variance();
    let var: Vec<f64> = w.iter().zip(s).map(|(wk, sk)| 1.0 / (1.0 / wk + 1.0 / sk)).collect();
    let mut weights = Vec::with_capacity(model.len());
    let mut comps = Vec::with_capacity(model.len());
    for (xi, om) in model.x().iter().zip(model.omega().iter()) {
        let ln_scale: f64 = (0..w.len()).map(|k| ln_normal_1d(xi[k], mu[k], w[k] + s[k])).sum();
        weights.push(om.abs() * (ln_v + ln_scale).exp());
        let mean = (0..w.len()).map(|k| var[k] * (xi[k] / w[k] + mu[k] / s[k])).collect();
        comps.push(DiagGaussian::new(mean, var.clone()).ok()?);
    }
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    weights.iter_mut().for_each(|x| *x /= total);
    GaussianMixture::new(weights, comps).ok()
}

/// Sparse nonnegative mixture approximating the acquisition density, plus its exact normalizer.
#[derive(Debug, Clone)]
pub struct AcquisitionMixture {
    /// Normalized mixture of the prior term and the `Omega_ij < 0` terms that survive pruning.
    pub sparse: GaussianMixture,
    /// `Z_A = int C(x,x) pi(x) dx` in closed form.
    pub normalizer: f64,
    /// Set when every component was pruned and `sparse` is the bare prior.
    pub degenerate: bool,
}

/// Builds the sparse acquisition mixture. Components whose normalized weight falls
/// below `1 / n_rec` are dropped, then the remainder is renormalized.
pub fn af_mixture_build(model: &WarpedGpModel, prior: &DiagGaussian, n_rec: usize) -> Result<AcquisitionMixture> {
    check_dim(model.dim(), prior.dim())?;
    let n = model.len();
    let g = pair_integrals(model, prior);
    let oi = model.omega_inv();
    let vprime = model.params().variance;
    let w = model.params().w_diag();
    let (mu, s) = (prior.mean(), prior.var_diag());
    let var_f: Vec<f64> = w.iter().zip(s).map(|(wk, sk)| 1.0 / (2.0 / wk + 1.0 / sk)).collect();

    let mut normalizer = vprime;
    let mut cand: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        normalizer -= oi[(i, i)] * g[(i, i)];
        for j in 0..i {
            let term = 2.0 * oi[(i, j)] * g[(i, j)];
            normalizer -= term;
            if term < 0.0 {
                cand.push((i, j, -term));
            }
        }
    }
    let positive_total = vprime + cand.iter().map(|c| c.2).sum::<f64>();
    let threshold = 1.0 / n_rec.max(1) as f64;
    let mut weights = Vec::new();
    let mut comps = Vec::new();
    if vprime / positive_total >= threshold {
        weights.push(vprime);
        comps.push(prior.clone());
    }
    let x = model.x();
    for (i, j, wt) in cand {
        if wt / positive_total < threshold {
            continue;
        }
        let mean = (0..w.len())
            .map(|k| var_f[k] * ((x.row(i)[k] + x.row(j)[k]) / w[k] + mu[k] / s[k]))
            .collect();
        weights.push(wt);
        comps.push(DiagGaussian::new(mean, var_f.clone())?);
    }
    let degenerate = weights.is_empty();
    let sparse = if degenerate {
        warn!("acquisition mixture pruned to nothing; falling back to the prior");
        GaussianMixture::single(prior.clone())
    } else {
        let kept: f64 = weights.iter().sum();
        GaussianMixture::new(weights.into_iter().map(|x| x / kept).collect(), comps)?
    };
    Ok(AcquisitionMixture { sparse, normalizer, degenerate })
}

/// Share of the prior in the candidate distribution for acquisition sampling.
const PRIOR_SHARE: f64 = 0.5;

/// Sparse mixture with the prior mixed in, so candidates cover the tails where `C(x,x) -> v'`.
fn af_envelope(acq: &AcquisitionMixture, prior: &DiagGaussian) -> Result<GaussianMixture> {
    let mut weights: Vec<f64> = acq.sparse.weights().iter().map(|w| w * (1.0 - PRIOR_SHARE)).collect();
    let mut comps = acq.sparse.components().to_vec();
    weights.push(PRIOR_SHARE);
    comps.push(prior.clone());
    GaussianMixture::new(weights, comps)
}

/// Output of one SMC correction pass.
#[derive(Debug, Clone)]
pub struct SmcDraw {
    pub points: Points,
    /// Mean importance weight, an estimate of the target's normalizer.
    pub normalizer_estimate: f64,
    /// Set when every candidate had zero weight and prior draws were returned instead.
    pub fell_back: bool,
}

/// Draws `count * supersample_ratio` candidates from `envelope`, weights them by
/// `target / envelope`, and resamples `count` points categorically.
pub fn smc_resample<R, T>(
    envelope: &GaussianMixture,
    target: T,
    prior: &DiagGaussian,
    count: usize,
    supersample_ratio: usize,
    rng: &mut R,
) -> Result<SmcDraw>
where
    R: Rng + ?Sized,
    T: Fn(&Points) -> Result<Vec<f64>>,
{
    if count == 0 {
        return Ok(SmcDraw { points: Points::new(prior.dim()), normalizer_estimate: 0.0, fell_back: false });
    }
    let cands = envelope.sample(count * supersample_ratio.max(1), rng)?;
    let q = envelope.density_batch(&cands)?;
    let t = target(&cands)?;
    let weights: Vec<f64> = q
        .iter()
        .zip(&t)
        .map(|(qi, ti)| if *qi > 0.0 && ti.is_finite() { ti.max(0.0) / qi } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        warn!("SMC weights vanished; drawing from the prior instead");
        return Ok(SmcDraw { points: prior.sample(count, rng), normalizer_estimate: 0.0, fell_back: true });
    }
    let picker = WeightedIndex::new(&weights).map_err(|e| BasqError::InvalidArgument(format!("SMC weights: {e}")))?;
    let idx: Vec<usize> = (0..count).map(|_| picker.sample(rng)).collect();
    Ok(SmcDraw { points: cands.select(&idx), normalizer_estimate: total / weights.len() as f64, fell_back: false })
}

/// Exact acquisition density `C(x,x) pi(x) / Z_A` at each row.
fn af_density_batch(model: &WarpedGpModel, prior: &DiagGaussian, normalizer: f64, pts: &Points) -> Result<Vec<f64>> {
    let (_, vars) = model.predict_warped_batch(pts)?;
    Ok(pts
        .iter()
        .zip(vars)
        .map(|(x, c)| c * prior.ln_pdf_unchecked(x).exp() / normalizer)
        .collect())
}

fn af_normalizer(acq: &AcquisitionMixture, smc_estimate: f64) -> f64 {
    if acq.normalizer > 0.0 && acq.normalizer.is_finite() {
        acq.normalizer
    } else {
        debug!("closed-form acquisition normalizer {} unusable; using SMC estimate", acq.normalizer);
        smc_estimate
    }
}

/// Samples the acquisition density via the sparse mixture and SMC correction.
pub fn smc_sample_af<R: Rng + ?Sized>(
    model: &WarpedGpModel,
    prior: &DiagGaussian,
    count: usize,
    supersample_ratio: usize,
    n_rec: usize,
    rng: &mut R,
) -> Result<Points> {
    let acq = af_mixture_build(model, prior, n_rec)?;
    let draw = smc_resample(&af_envelope(&acq, prior)?, |p| af_density_batch(model, prior, 1.0, p), prior, count, supersample_ratio, rng)?;
    Ok(draw.points)
}

/// Weighted candidate set plus bookkeeping about how it was drawn.
#[derive(Debug, Clone)]
pub struct ProposalDraw {
    pub samples: WeightedPointSet,
    /// Number of samples from the distribution of interest; the rest came from the other component.
    pub n_from_f: usize,
    pub fell_back: bool,
}

/// Draws `cfg.n_samples` points from `g = (1 - r) f_bar + r q` and weights each by
/// `f(x) / g(x)`, where `f_bar` is the normalized distribution of interest and `q`
/// the acquisition density (IVR, UB) or the observation-centred mixture (IGB).
pub fn propose<R: Rng + ?Sized>(
    model: Option<&WarpedGpModel>,
    prior: &DiagGaussian,
    cfg: &ProposalConfig,
    rng: &mut R,
) -> Result<WeightedPointSet> {
    propose_detailed(model, prior, cfg, rng).map(|d| d.samples)
}

pub fn propose_detailed<R: Rng + ?Sized>(
    model: Option<&WarpedGpModel>,
    prior: &DiagGaussian,
    cfg: &ProposalConfig,
    rng: &mut R,
) -> Result<ProposalDraw> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let Some(model) = model.filter(|m| !m.is_empty()) else {
        // no data: f = pi and the acquisition density is proportional to pi
        let pts = prior.sample(n, rng);
        return Ok(ProposalDraw { samples: WeightedPointSet::new(pts, vec![1.0; n])?, n_from_f: n, fell_back: false });
    };
    check_dim(model.dim(), prior.dim())?;
    let (n_f, n_q) = cfg.split();
    let mut fell_back = false;

    let t0 = std::time::Instant::now();
    // distribution of interest
    let envelope = f_envelope(model, prior);
    let mut f_is_prior = envelope.is_none();
    let mut pts = Points::with_capacity(prior.dim(), n);
    let mut z_f = 1.0;
    if let Some(env) = &envelope {
        let draw = smc_resample(env, |p| f_density_batch(Some(model), prior, p), prior, n_f.max(1), cfg.supersample_ratio, rng)?;
        if draw.fell_back {
            f_is_prior = true;
            fell_back = true;
        } else {
            z_f = draw.normalizer_estimate;
        }
        if n_f > 0 {
            pts.extend(&draw.points.select(&(0..n_f).collect::<Vec<_>>()))?;
        }
    }
    if f_is_prior && n_f > 0 {
        pts = prior.sample(n_f, rng);
    }

    let t_f = t0.elapsed();
    // uncertainty component
    let mut igb: Option<GaussianMixture> = None;
    let mut af_norm = 1.0;
    if n_q > 0 {
        match cfg.kind {
            ProposalKind::Igb => {
                let wdiag = model.params().w_diag();
                let comps: Vec<DiagGaussian> = model
                    .x()
                    .iter()
                    .zip(model.y())
                    .filter(|(_, y)| **y > 0.0)
                    .map(|(x, _)| DiagGaussian::new(x.to_vec(), wdiag.clone()))
                    .collect::<Result<_>>()?;
                let mix = if comps.is_empty() {
                    GaussianMixture::single(prior.clone())
                } else {
                    let k = comps.len();
                    GaussianMixture::new(vec![1.0 / k as f64; k], comps)?
                };
                pts.extend(&mix.sample(n_q, rng)?)?;
                igb = Some(mix);
            }
            ProposalKind::Ivr | ProposalKind::Ub => {
                let acq = af_mixture_build(model, prior, n)?;
                debug!("acquisition mixture: {} components", acq.sparse.len());
                let draw = smc_resample(&af_envelope(&acq, prior)?, |p| af_density_batch(model, prior, 1.0, p), prior, n_q, cfg.supersample_ratio, rng)?;
                fell_back |= draw.fell_back;
                af_norm = af_normalizer(&acq, draw.normalizer_estimate);
                pts.extend(&draw.points)?;
            }
        }
    }

    let t_q = t0.elapsed() - t_f;
    // importance weights against the realized mixture
    let frac_f = n_f as f64 / n as f64;
    let frac_q = n_q as f64 / n as f64;
    let f_vals = if f_is_prior {
        pts.iter().map(|x| prior.ln_pdf_unchecked(x).exp()).collect::<Vec<_>>()
    } else {
        f_density_batch(Some(model), prior, &pts)?
    };
    let q_vals = if n_q == 0 {
        vec![0.0; pts.len()]
    } else if let Some(mix) = &igb {
        mix.density_batch(&pts)?
    } else {
        af_density_batch(model, prior, af_norm, &pts)?
    };
    let weights = f_vals
        .iter()
        .zip(&q_vals)
        .map(|(f, q)| {
            let g = frac_f * f / z_f + frac_q * q;
            if g > 0.0 && g.is_finite() {
                f / g
            } else {
                0.0
            }
        })
        .collect();
    debug!("proposal of {n}: f sampler {t_f:?}, uncertainty sampler {t_q:?}, weights {:?}", t0.elapsed() - t_f - t_q);
    Ok(ProposalDraw { samples: WeightedPointSet::new(pts, weights)?, n_from_f: n_f, fell_back })
}
