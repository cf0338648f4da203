//! Benchmark harness: synthetic problems, metrics, a Monte Carlo baseline and
//! the command-line front end.

pub mod cli;
pub mod metrics;
pub mod problems;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, EngineState, TraceRecord};
use crate::error::Result;
use crate::points::Points;

pub use metrics::{mae, mc_baseline_estimate, posterior_kl};
pub use problems::SyntheticProblem;

/// Stream index reserved for drawing KL reference samples.
const KL_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Evaluate KL to the true posterior after initialization and every step.
    pub kl: bool,
    /// Save after every step and resume from here if the file exists.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub problem: String,
    pub seed: u64,
    pub initial: TraceRecord,
    pub trace: Vec<TraceRecord>,
    pub ez: f64,
    pub var_z: f64,
    pub mae: Option<f64>,
    pub kl: Option<f64>,
}

/// Draws the true-posterior samples used for KL from a dedicated stream of `seed`.
pub fn kl_samples(problem: &SyntheticProblem, seed: u64) -> Result<Points> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(KL_STREAM);
    metrics::kl_reference(problem, &mut rng)
}

/// Runs the engine on `problem` and annotates every trace row with the available metrics.
pub fn run_problem(problem: &SyntheticProblem, cfg: EngineConfig, opts: &BenchOptions) -> Result<RunOutcome> {
    let lik = problem.likelihood_fn();
    let seed = cfg.seed;
    let mut state = match &opts.checkpoint {
        Some(p) if p.exists() => {
            log::info!("resuming from {}", p.display());
            EngineState::load_checkpoint(p)?
        }
        _ => EngineState::init(problem.prior.clone(), &lik, None, cfg)?,
    };
    let reference = if opts.kl && problem.z_true.is_some() { Some(kl_samples(problem, seed)?) } else { None };
    let annotate = |st: &EngineState, rec: &mut TraceRecord| -> Result<()> {
        rec.mae = problem.z_true.map(|z| mae(rec.ez, z));
        if let Some(s) = &reference {
            rec.kl = Some(posterior_kl(problem, &st.posterior()?, s)?);
        }
        Ok(())
    };
    if state.trace().is_empty() {
        let mut init = state.initial_record().clone();
        annotate(&state, &mut init)?;
        *state.initial_record_mut() = init;
    }
    loop {
        let cfg = state.config();
        if state.evidence().variance <= cfg.var_threshold || state.evals() >= cfg.budget {
            break;
        }
        let n = cfg.batch_size.min(cfg.budget - state.evals());
        let mut rec = state.step_with(&lik, n, &mut |_| {})?;
        annotate(&state, &mut rec)?;
        *state.trace_mut().last_mut().expect("step pushes a record") = rec;
        if let Some(p) = &opts.checkpoint {
            state.save_checkpoint(p)?;
        }
    }
    let last = state.trace().last().cloned().unwrap_or_else(|| state.initial_record().clone());
    Ok(RunOutcome {
        problem: problem.name.clone(),
        seed,
        initial: state.initial_record().clone(),
        trace: state.trace().to_vec(),
        ez: state.evidence().mean,
        var_z: state.evidence().variance,
        mae: last.mae,
        kl: last.kl,
    })
}

/// Median and interquartile range with linear interpolation between order statistics.
pub fn median_iqr(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some((q(0.5), q(0.75) - q(0.25)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_iqr() {
        assert_eq!(median_iqr(&[3.0, 1.0, 2.0]), Some((2.0, 1.0)));
        assert_eq!(median_iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]), Some((3.0, 2.0)));
        assert_eq!(median_iqr(&[]), None);
    }
}
