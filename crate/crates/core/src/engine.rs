//! The batch quadrature loop: propose, build test functions from the current
//! posterior covariance, recombine to a batch, evaluate the batch in parallel,
//! refit and re-estimate the evidence.

use std::path::Path;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BasqError, Result};
use crate::gaussian::DiagGaussian;
use crate::gp::{dedup_indices, optimize_hypers, AlphaRule, HyperoptConfig, RbfKernelParams, WarpedGpModel, DEDUP_TOL};
use crate::nystrom::{Kernel, NystromBasis, WarpedCovariance};
use crate::points::{sq_dist, Points, WeightedPointSet};
use crate::proposal::{propose, ProposalConfig, ProposalKind};
use crate::quadrature::{evidence, EvidenceEstimate, PosteriorModel};
use crate::recombination::recombine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Points evaluated per iteration.
    pub batch_size: usize,
    /// Weighted candidates handed to recombination.
    pub n_rec: usize,
    /// Nyström landmarks.
    pub n_nys: usize,
    pub r: f64,
    pub proposal: ProposalKind,
    pub supersample_ratio: usize,
    /// Stop once the evidence variance drops to this level.
    pub var_threshold: f64,
    /// Likelihood evaluations allowed after initialization.
    pub budget: usize,
    /// Re-optimize kernel hyperparameters every this many iterations (0 disables).
    pub hyperopt_every: usize,
    pub hyperopt: HyperoptConfig,
    pub seed: u64,
    pub proper: bool,
    pub initial_lengthscale: f64,
    pub initial_variance: f64,
    /// Prior draws evaluated before the first iteration.
    pub n_init: usize,
    /// Evaluate each batch on one thread.
    pub serial: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            n_rec: 20_000,
            n_nys: 200,
            r: 0.5,
            proposal: ProposalKind::Ivr,
            supersample_ratio: 100,
            var_threshold: f64::MIN_POSITIVE,
            budget: 600,
            hyperopt_every: 1,
            hyperopt: HyperoptConfig { lengthscale_bounds: (0.05, 1e3), ..Default::default() },
            seed: 0,
            proper: false,
            initial_lengthscale: 2.0,
            initial_variance: 2.0,
            n_init: 2,
            serial: false,
        }
    }
}

impl EngineConfig {
    /// Reduced sample sizes for single-core interactive runs.
    pub fn desk() -> Self {
        Self {
            n_rec: 20000,
            n_nys: 200,
            supersample_ratio: 20,
            hyperopt: HyperoptConfig { restarts: 2, max_evals: 60, lengthscale_bounds: (0.05, 1e3), ..Default::default() },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(BasqError::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.var_threshold > 0.0) {
            return Err(BasqError::InvalidArgument(format!("variance threshold {} must be positive", self.var_threshold)));
        }
        if self.n_nys < self.batch_size {
            return Err(BasqError::InvalidArgument(format!("{} landmarks cannot support a batch of {}", self.n_nys, self.batch_size)));
        }
        self.proposal_config(self.n_rec).validate()?;
        if self.n_rec < 10 * self.n_nys || self.n_nys < 2 * self.batch_size {
            warn!("expected n_rec >= 10 n_nys and n_nys >= 2 batch; got n_rec={}, n_nys={}, batch={}", self.n_rec, self.n_nys, self.batch_size);
        }
        Ok(())
    }

    fn proposal_config(&self, n_samples: usize) -> ProposalConfig {
        ProposalConfig { kind: self.proposal, r: self.r, n_samples, supersample_ratio: self.supersample_ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Likelihood evaluations since initialization.
    pub evals: usize,
    /// Wall-clock time of the iteration minus time spent in the likelihood.
    pub overhead_ms: f64,
    pub ez: f64,
    pub var_z: f64,
    pub mae: Option<f64>,
    pub kl: Option<f64>,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone)]
pub struct EngineState {
    cfg: EngineConfig,
    prior: DiagGaussian,
    model: WarpedGpModel,
    evidence: EvidenceEstimate,
    iteration: usize,
    evals: usize,
    initial: TraceRecord,
    trace: Vec<TraceRecord>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: EngineConfig,
    prior: DiagGaussian,
    x: Points,
    y: Vec<f64>,
    params: RbfKernelParams,
    iteration: usize,
    evals: usize,
    initial: TraceRecord,
    trace: Vec<TraceRecord>,
}

/// Kernel and landmarks handed to the Nyström construction, for inspection.
pub struct NystromInput<'a> {
    pub iteration: usize,
    pub kernel: &'a dyn Kernel,
    pub landmarks: &'a Points,
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

fn evaluate<L>(likelihood: &L, batch: &Points, serial: bool) -> Result<(Vec<f64>, Duration)>
where
    L: Fn(&[f64]) -> f64 + Sync,
{
    let t0 = Instant::now();
    let rows: Vec<&[f64]> = batch.iter().collect();
    let ys: Vec<f64> = if serial { rows.iter().map(|x| likelihood(x)).collect() } else { rows.par_iter().map(|x| likelihood(x)).collect() };
    let dt = t0.elapsed();
    for (x, y) in rows.iter().zip(&ys) {
        if y.is_nan() || *y == f64::NEG_INFINITY {
            return Err(BasqError::BadLikelihood { value: *y, point: x.to_vec() });
        }
    }
    Ok((ys, dt))
}

impl EngineState {
    /// Evaluates the likelihood at `x_init` (or `cfg.n_init` prior draws) and fits the first model.
    pub fn init<L>(prior: DiagGaussian, likelihood: &L, x_init: Option<Points>, cfg: EngineConfig) -> Result<Self>
    where
        L: Fn(&[f64]) -> f64 + Sync,
    {
        cfg.validate()?;
        let start = Instant::now();
        let d = prior.dim();
        let x0 = match x_init {
            Some(x) => {
                check_dim(d, x.dim())?;
                x
            }
            None => prior.sample(cfg.n_init.max(1), &mut iteration_rng(cfg.seed, 0)),
        };
        if x0.is_empty() {
            return Err(BasqError::TooFewPoints { needed: 1, got: 0 });
        }
        let (y0, dt) = evaluate(likelihood, &x0, cfg.serial)?;
        let params = RbfKernelParams::isotropic(cfg.initial_variance, cfg.initial_lengthscale, d)?;
        let model = WarpedGpModel::fit(&x0, &y0, params, AlphaRule::default())?;
        let ev = evidence(&model, &prior)?;
        let initial = TraceRecord {
            iteration: 0,
            evals: 0,
            overhead_ms: (start.elapsed().saturating_sub(dt)).as_secs_f64() * 1e3,
            ez: ev.mean,
            var_z: ev.variance,
            mae: None,
            kl: None,
        };
        Ok(Self { cfg, prior, model, evidence: ev, iteration: 0, evals: 0, initial, trace: Vec::new() })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn prior(&self) -> &DiagGaussian {
        &self.prior
    }

    pub fn model(&self) -> &WarpedGpModel {
        &self.model
    }

    pub fn evidence(&self) -> EvidenceEstimate {
        self.evidence
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Likelihood evaluations made by iterations (initial points excluded).
    pub fn evals(&self) -> usize {
        self.evals
    }

    /// Record describing the state right after initialization.
    pub fn initial_record(&self) -> &TraceRecord {
        &self.initial
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut [TraceRecord] {
        &mut self.trace
    }

    pub fn initial_record_mut(&mut self) -> &mut TraceRecord {
        &mut self.initial
    }

    pub fn posterior(&self) -> Result<PosteriorModel> {
        PosteriorModel::with_evidence(self.model.clone(), self.prior.clone(), self.evidence.mean)
    }

    /// Runs one iteration with a batch of `cfg.batch_size` points.
    pub fn step<L>(&mut self, likelihood: &L) -> Result<TraceRecord>
    where
        L: Fn(&[f64]) -> f64 + Sync,
    {
        self.step_with(likelihood, self.cfg.batch_size, &mut |_| {})
    }

    /// One iteration with batch size `n`; `inspect` sees the Nyström inputs.
    pub fn step_with<L>(&mut self, likelihood: &L, n: usize, inspect: &mut dyn FnMut(&NystromInput<'_>)) -> Result<TraceRecord>
    where
        L: Fn(&[f64]) -> f64 + Sync,
    {
        let start = Instant::now();
        let iteration = self.iteration + 1;
        let mut rng = iteration_rng(self.cfg.seed, iteration);
        let model = &self.model;

        let landmarks = propose(Some(model), &self.prior, &self.cfg.proposal_config(self.cfg.n_nys.max(n)), &mut rng)?.points;
        let rec = propose(Some(model), &self.prior, &self.cfg.proposal_config(self.cfg.n_rec.max(n)), &mut rng)?;

        let t_prop = start.elapsed();
        let kernel = WarpedCovariance(model);
        inspect(&NystromInput { iteration, kernel: &kernel, landmarks: &landmarks });
        let basis = NystromBasis::build(&kernel, landmarks, n.saturating_sub(1))?;
        let phi = |p: &Points| basis.eval_test_functions(&kernel, p);
        let resid = |p: &Points| basis.residual_sqrt_diag(&kernel, p);
        let reduced = recombine(&rec, phi, n, if self.cfg.proper { Some(&resid) } else { None })?;

        debug!("iteration {iteration}: proposals {t_prop:?}, basis and recombination {:?}", start.elapsed() - t_prop);
        let batch = self.fill_batch(&rec, reduced.set.points, n, &mut rng)?;
        let (ys, eval_time) = evaluate(likelihood, &batch, self.cfg.serial)?;

        let mut x = self.model.x().clone();
        x.extend(&batch)?;
        let mut y = self.model.y().to_vec();
        y.extend_from_slice(&ys);
        let mut params = self.model.params().clone();
        if self.cfg.hyperopt_every > 0 && iteration % self.cfg.hyperopt_every == 0 {
            let fitted = WarpedGpModel::fit(&x, &y, params.clone(), AlphaRule::default())?;
            let out = optimize_hypers(&fitted, &self.cfg.hyperopt, &mut rng);
            if out.failed {
                warn!("iteration {iteration}: hyperparameter optimization failed, keeping previous kernel");
            }
            params = out.params;
        }
        let new_model = match WarpedGpModel::fit(&x, &y, params, AlphaRule::default()) {
            Ok(m) => m,
            Err(e) => {
                warn!("iteration {iteration}: refit with optimized kernel failed ({e}); keeping previous kernel");
                WarpedGpModel::fit(&x, &y, self.model.params().clone(), AlphaRule::default())?
            }
        };
        let ev = evidence(&new_model, &self.prior)?;
        self.model = new_model;
        self.evidence = ev;
        self.iteration = iteration;
        self.evals += batch.len();
        let rec = TraceRecord {
            iteration,
            evals: self.evals,
            overhead_ms: start.elapsed().saturating_sub(eval_time).as_secs_f64() * 1e3,
            ez: ev.mean,
            var_z: ev.variance,
            mae: None,
            kl: None,
        };
        info!("iteration {iteration}: evals={} E[Z]={:.6e} Var[Z]={:.3e} overhead={:.1}ms", rec.evals, rec.ez, rec.var_z, rec.overhead_ms);
        self.trace.push(rec.clone());
        Ok(rec)
    }

    /// Drops points that coincide with observations or each other and tops the
    /// batch up to `n` with weighted draws from the candidate pool.
    fn fill_batch(&self, pool: &WeightedPointSet, chosen: Points, n: usize, rng: &mut ChaCha8Rng) -> Result<Points> {
        let tol2 = DEDUP_TOL * DEDUP_TOL;
        let observed = self.model.x();
        let clashes = |p: &[f64], batch: &Points| observed.iter().chain(batch.iter()).any(|q| sq_dist(p, q) <= tol2);
        let mut batch = Points::with_capacity(chosen.dim(), n);
        let mut dropped = 0;
        for p in chosen.iter() {
            if clashes(p, &batch) {
                dropped += 1;
            } else {
                batch.push(p)?;
            }
        }
        let missing = n.saturating_sub(batch.len());
        if missing > 0 {
            let picker = WeightedIndex::new(&pool.weights).ok();
            let mut tries = 0;
            while batch.len() < n && tries < 10 * missing {
                tries += 1;
                let i = match &picker {
                    Some(p) => p.sample(rng),
                    None => rand::Rng::random_range(rng, 0..pool.len()),
                };
                let p = pool.points.row(i);
                if !clashes(p, &batch) {
                    batch.push(p)?;
                }
            }
            if dropped > 0 || batch.len() < n {
                info!("batch: {dropped} duplicate points replaced, {} of {n} filled", batch.len());
            }
        }
        debug_assert!(dedup_indices(&batch, DEDUP_TOL).len() == batch.len());
        Ok(batch)
    }

    /// Steps until the evidence variance reaches the threshold or the budget is spent.
    pub fn run<L>(&mut self, likelihood: &L) -> Result<(PosteriorModel, EvidenceEstimate, Vec<TraceRecord>)>
    where
        L: Fn(&[f64]) -> f64 + Sync,
    {
        self.run_with(likelihood, &mut |_, _| {})
    }

    /// As [`Self::run`], letting `observe` annotate each record after its step.
    pub fn run_with<L>(&mut self, likelihood: &L, observe: &mut dyn FnMut(&EngineState, &mut TraceRecord)) -> Result<(PosteriorModel, EvidenceEstimate, Vec<TraceRecord>)>
    where
        L: Fn(&[f64]) -> f64 + Sync,
    {
        while self.evidence.variance > self.cfg.var_threshold && self.evals < self.cfg.budget {
            let n = self.cfg.batch_size.min(self.cfg.budget - self.evals);
            let mut rec = self.step_with(likelihood, n, &mut |_| {})?;
            observe(self, &mut rec);
            *self.trace.last_mut().expect("step pushes a record") = rec;
        }
        Ok((self.posterior()?, self.evidence, self.trace.clone()))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let cp = Checkpoint {
            config: self.cfg.clone(),
            prior: self.prior.clone(),
            x: self.model.x().clone(),
            y: self.model.y().to_vec(),
            params: self.model.params().clone(),
            iteration: self.iteration,
            evals: self.evals,
            initial: self.initial.clone(),
            trace: self.trace.clone(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&cp)?)?;
        Ok(())
    }

    /// Restores a saved run; continuing it reproduces the uninterrupted run.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        cp.config.validate()?;
        let model = WarpedGpModel::fit(&cp.x, &cp.y, cp.params, AlphaRule::default())?;
        let ev = evidence(&model, &cp.prior)?;
        Ok(Self { cfg: cp.config, prior: cp.prior, model, evidence: ev, iteration: cp.iteration, evals: cp.evals, initial: cp.initial, trace: cp.trace })
    }
}
