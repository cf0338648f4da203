//! Synthetic likelihoods with known evidence under the prior `N(0, 2 I)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, BasqError, Result};
use crate::gaussian::{DiagGaussian, GaussianMixture};
use crate::points::Points;

pub const PRIOR_VARIANCE: f64 = 2.0;
pub const BRANIN_Z: f64 = 0.913416;
pub const ACKLEY_Z: f64 = 5.43478;
pub const OSCILLATORY_Z: f64 = 1.0;
pub const GAUSSMIX_Z: f64 = 1.0;

pub const PROBLEM_NAMES: [&str; 4] = ["branin", "ackley", "oscillatory", "gaussmix"];

type LikelihoodFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct SyntheticProblem {
    pub name: String,
    pub dim: usize,
    pub prior: DiagGaussian,
    pub z_true: Option<f64>,
    likelihood: LikelihoodFn,
    /// Exact likelihood as a mixture, when it is one.
    mixture: Option<GaussianMixture>,
}

impl std::fmt::Debug for SyntheticProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticProblem").field("name", &self.name).field("dim", &self.dim).field("z_true", &self.z_true).finish()
    }
}

pub fn branin(x: &[f64]) -> f64 {
    x.iter().map(|&v| (v.sin() + 0.5 * (3.0 * v).cos()).powi(2) / ((0.5 * v).powi(2) + 0.3)).product()
}

pub fn ackley(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
    -20.0 * (-0.2 * sq.sqrt()).exp() + cs.exp() + 20.0
}

pub fn oscillatory(x: &[f64]) -> f64 {
    (2.0 * PI + 5.0 * x.iter().sum::<f64>()).cos() + 1.0
}

/// Random mixture likelihood whose integral against the prior is exactly one:
/// 10 to 15 isotropic components, variances in `[1, 4]`, means in `[-3, 3]^d`.
pub fn gaussmix_likelihood(dim: usize, seed: u64) -> Result<GaussianMixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(10..=15);
    let mut comps = Vec::with_capacity(k);
    let mut raw = Vec::with_capacity(k);
    for _ in 0..k {
        let var = rng.random_range(1.0..=4.0);
        let mean: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..=3.0)).collect();
        let overlap = DiagGaussian::isotropic(vec![0.0; dim], var + PRIOR_VARIANCE)?.pdf(&mean)?;
        raw.push(rng.random::<f64>() / overlap);
        comps.push(DiagGaussian::isotropic(mean, var)?);
    }
    // after this scaling sum_i w_i N(mu_i; 0, S_i + S_pi) = 1
    let overlaps: Vec<f64> = comps
        .iter()
        .map(|c| DiagGaussian::isotropic(vec![0.0; dim], c.var_diag()[0] + PRIOR_VARIANCE).and_then(|p| p.pdf(c.mean())))
        .collect::<Result<_>>()?;
    let z: f64 = raw.iter().zip(&overlaps).map(|(w, o)| w * o).sum();
    GaussianMixture::new(raw.into_iter().map(|w| w / z).collect(), comps)
}

impl SyntheticProblem {
    /// Looks up a registered problem. `dim` defaults to 2; only `gaussmix` accepts
    /// other dimensions. `seed` only affects `gaussmix`.
    pub fn by_name(name: &str, dim: Option<usize>, seed: u64) -> Result<Self> {
        let d = dim.unwrap_or(2);
        if d == 0 {
            return Err(BasqError::InvalidArgument("dimension must be positive".into()));
        }
        let fixed = |f: fn(&[f64]) -> f64, z: f64| -> Result<(LikelihoodFn, Option<GaussianMixture>, Option<f64>)> {
            if d != 2 {
                return Err(BasqError::InvalidArgument(format!("{name} is defined in 2 dimensions only")));
            }
            Ok((Arc::new(f), None, Some(z)))
        };
        let (likelihood, mixture, z_true) = match name {
            "branin" => fixed(branin, BRANIN_Z)?,
            "ackley" => fixed(ackley, ACKLEY_Z)?,
            "oscillatory" => fixed(oscillatory, OSCILLATORY_Z)?,
            "gaussmix" => {
                let mix = gaussmix_likelihood(d, seed)?;
                let m2 = mix.clone();
                let f: LikelihoodFn = Arc::new(move |x: &[f64]| m2.density_unchecked(x));
                (f, Some(mix), Some(GAUSSMIX_Z))
            }
            other => {
                return Err(BasqError::InvalidArgument(format!("unknown problem {other:?}; expected one of {}", PROBLEM_NAMES.join(", "))));
            }
        };
        Ok(Self { name: name.to_string(), dim: d, prior: DiagGaussian::isotropic(vec![0.0; d], PRIOR_VARIANCE)?, z_true, likelihood, mixture })
    }

    pub fn likelihood(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok((self.likelihood)(x))
    }

    /// Unchecked likelihood suitable for handing to the engine.
    pub fn likelihood_fn(&self) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        move |x| (self.likelihood)(x)
    }

    pub fn mixture(&self) -> Option<&GaussianMixture> {
        self.mixture.as_ref()
    }

    /// Normalized true posterior density `l(x) pi(x) / Z`.
    pub fn posterior_density(&self, x: &[f64]) -> Result<f64> {
        let z = self.z_true.ok_or_else(|| BasqError::InvalidArgument(format!("{} has no known evidence", self.name)))?;
        Ok(self.likelihood(x)? * self.prior.pdf(x)? / z)
    }

    /// Draws from the true posterior: exactly for mixtures, otherwise by rejection
    /// against the prior with a grid-based bound on the likelihood.
    pub fn sample_posterior<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Points> {
        if let Some(mix) = &self.mixture {
            let (ws, comps): (Vec<f64>, Vec<DiagGaussian>) = mix
                .weights()
                .iter()
                .zip(mix.components())
                .map(|(w, c)| {
                    let prod = crate::gaussian::product_pair(c, &self.prior)?;
                    Ok((w * prod.0, prod.1))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            return GaussianMixture::new(ws, comps)?.sample(count, rng);
        }
        let bound = 1.1 * self.likelihood_bound();
        let mut out = Points::with_capacity(self.dim, count);
        let mut buf = Vec::with_capacity(self.dim);
        while out.len() < count {
            buf.clear();
            self.prior.sample_into(rng, &mut buf);
            if rng.random::<f64>() * bound <= (self.likelihood)(&buf) {
                out.push(&buf)?;
            }
        }
        Ok(out)
    }

    /// Maximum of the likelihood over a grid on `[-8, 8]^2`, a box holding all but
    /// about `3e-8` of the prior mass.
    fn likelihood_bound(&self) -> f64 {
        let steps = 801;
        let mut best = 0.0f64;
        for i in 0..steps {
            for j in 0..steps {
                let x = [-8.0 + 16.0 * i as f64 / (steps - 1) as f64, -8.0 + 16.0 * j as f64 / (steps - 1) as f64];
                best = best.max((self.likelihood)(&x));
            }
        }
        best
    }
}
