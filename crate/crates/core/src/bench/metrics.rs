//! Accuracy metrics for evidence and posterior estimates, and a Monte Carlo baseline.

use rand::Rng;

use crate::error::Result;
use crate::gaussian::DiagGaussian;
use crate::points::Points;
use crate::quadrature::PosteriorModel;

use super::problems::SyntheticProblem;

/// Floor applied to estimated densities inside the KL logarithm.
pub const KL_EPS: f64 = 1e-300;
/// Default number of true-posterior draws for KL.
pub const KL_SAMPLES: usize = 10_000;
/// Grid points per dimension for the conditional-slice RMSE.
pub const SLICE_POINTS: usize = 50;

pub fn mae(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs()
}

/// Monte Carlo KL divergence `mean log(p(x_s) / max(q(x_s), eps))` over draws `x_s ~ p`.
pub fn kl_from_samples(samples: &Points, p: impl Fn(&[f64]) -> f64, q_values: &[f64]) -> f64 {
    let total: f64 = samples.iter().zip(q_values).map(|(x, q)| (p(x) / q.max(KL_EPS)).ln()).sum();
    total / samples.len() as f64
}

/// KL from the true posterior to the estimated one, over fixed true-posterior draws.
pub fn posterior_kl(problem: &SyntheticProblem, posterior: &PosteriorModel, samples: &Points) -> Result<f64> {
    let model = posterior.model();
    let means = model.mean_warped_batch(samples)?;
    let est: Vec<f64> = samples
        .iter()
        .zip(means)
        .map(|(x, m)| (model.alpha() + 0.5 * m * m) * posterior.prior().pdf(x).unwrap_or(0.0) / posterior.evidence_mean())
        .collect();
    let z = problem.z_true.unwrap_or(f64::NAN);
    Ok(kl_from_samples(samples, |x| problem.likelihood_fn()(x) * problem.prior.pdf(x).unwrap_or(0.0) / z, &est))
}

/// Draws the fixed sample set used for KL evaluation.
pub fn kl_reference<R: Rng + ?Sized>(problem: &SyntheticProblem, rng: &mut R) -> Result<Points> {
    problem.sample_posterior(KL_SAMPLES, rng)
}

/// Root-mean-square error of the one-dimensional conditional posteriors through
/// `anchor`, one slice per dimension on a grid over `[-6, 6]`, averaged over slices.
pub fn conditional_rmse(problem: &SyntheticProblem, posterior: &PosteriorModel, anchor: &[f64]) -> Result<f64> {
    let d = problem.dim;
    let fine = 4001;
    let (lo, hi) = (-6.0, 6.0);
    let mut total = 0.0;
    for free in 0..d {
        let fixed_dims: Vec<usize> = (0..d).filter(|&k| k != free).collect();
        let fixed_vals: Vec<f64> = fixed_dims.iter().map(|&k| anchor[k]).collect();
        let cond = posterior.conditional(&fixed_dims, &fixed_vals)?;
        let joint = |t: f64| {
            let mut x = anchor.to_vec();
            x[free] = t;
            problem.likelihood_fn()(&x) * problem.prior.pdf(&x).unwrap_or(0.0)
        };
        let h = (hi - lo) / (fine - 1) as f64;
        let norm: f64 = (0..fine).map(|i| joint(lo + i as f64 * h) * h).sum();
        let sse: f64 = (0..SLICE_POINTS)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / (SLICE_POINTS - 1) as f64;
                (joint(t) / norm - cond.density(t)).powi(2)
            })
            .sum();
        total += (sse / SLICE_POINTS as f64).sqrt();
    }
    Ok(total / d as f64)
}

/// Running prior-sample mean of the likelihood; entry `i` uses the first `i + 1` draws.
pub fn mc_baseline_estimate<R: Rng + ?Sized>(problem: &SyntheticProblem, budget: usize, rng: &mut R) -> Vec<f64> {
    mc_running_mean(problem.likelihood_fn(), &problem.prior, budget, rng)
}

pub fn mc_running_mean<R: Rng + ?Sized>(f: impl Fn(&[f64]) -> f64, prior: &DiagGaussian, budget: usize, rng: &mut R) -> Vec<f64> {
    let mut mean = 0.0;
    let mut buf = Vec::with_capacity(prior.dim());
    (0..budget)
        .map(|i| {
            buf.clear();
            prior.sample_into(rng, &mut buf);
            mean += (f(&buf) - mean) / (i + 1) as f64;
            mean
        })
        .collect()
}
