//! Compare the engine with plain Monte Carlo on a random Gaussian-mixture
//! likelihood whose evidence is exactly one.

use basq::bench::{mae, mc_baseline_estimate, SyntheticProblem};
use basq::engine::{EngineConfig, EngineState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> basq::error::Result<()> {
    for seed in 0..3 {
        let problem = SyntheticProblem::by_name("gaussmix", Some(2), seed)?;
        let lik = problem.likelihood_fn();
        let cfg = EngineConfig { seed, ..EngineConfig::desk() };
        let mut state = EngineState::init(problem.prior.clone(), &lik, None, cfg)?;
        let (_, ev, _) = state.run(&lik)?;
        let mc = mc_baseline_estimate(&problem, 600, &mut ChaCha8Rng::seed_from_u64(seed));
        println!("seed {seed}: quadrature MAE {:.2e}   Monte Carlo MAE {:.2e}", mae(ev.mean, 1.0), mae(mc[599], 1.0));
    }
    Ok(())
}
