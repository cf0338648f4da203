//! Run the engine on the two-dimensional Branin-Hoo likelihood and inspect the
//! evidence trace, a marginal and a conditional slice of the posterior.

use basq::bench::SyntheticProblem;
use basq::engine::{EngineConfig, EngineState};

fn main() -> basq::error::Result<()> {
    let problem = SyntheticProblem::by_name("branin", None, 0)?;
    let lik = problem.likelihood_fn();
    let cfg = EngineConfig { budget: 400, ..EngineConfig::desk() };
    let mut state = EngineState::init(problem.prior.clone(), &lik, None, cfg)?;
    let (posterior, ev, trace) = state.run(&lik)?;
    for t in &trace {
        println!("iter {} evals {:4} E[Z] {:.5} Var[Z] {:.2e} overhead {:.0} ms", t.iteration, t.evals, t.ez, t.var_z, t.overhead_ms);
    }
    println!("final E[Z] = {:.5}, truth {}", ev.mean, problem.z_true.unwrap_or(f64::NAN));

    let marginal = posterior.marginal(0)?;
    let cond = posterior.conditional(&[1], &[0.0])?;
    println!("   x    p(x1)   p(x1 | x2=0)");
    for i in 0..9 {
        let t = -4.0 + i as f64;
        println!("{t:+.1}  {:.4}  {:.4}", marginal.density(&[t])?, cond.density(t));
    }
    Ok(())
}
