//! Stop a run after two iterations, save it, and resume from the file. The
//! resumed run ends in exactly the same state as an uninterrupted one.

use basq::bench::SyntheticProblem;
use basq::engine::{EngineConfig, EngineState};

fn main() -> basq::error::Result<()> {
    let problem = SyntheticProblem::by_name("oscillatory", None, 0)?;
    let lik = problem.likelihood_fn();
    let cfg = EngineConfig { batch_size: 50, budget: 200, n_rec: 2000, supersample_ratio: 5, ..EngineConfig::desk() };

    let mut full = EngineState::init(problem.prior.clone(), &lik, None, cfg.clone())?;
    full.run(&lik)?;

    let path = std::env::temp_dir().join("basq_checkpoint_example.json");
    let mut first = EngineState::init(problem.prior.clone(), &lik, None, cfg)?;
    first.step(&lik)?;
    first.step(&lik)?;
    first.save_checkpoint(&path)?;
    println!("saved after {} evaluations to {}", first.evals(), path.display());

    let mut resumed = EngineState::load_checkpoint(&path)?;
    resumed.run(&lik)?;
    println!("uninterrupted E[Z] = {:.10}", full.evidence().mean);
    println!("resumed       E[Z] = {:.10}", resumed.evidence().mean);
    assert_eq!(full.evidence(), resumed.evidence());
    std::fs::remove_file(&path)?;
    Ok(())
}
