//! Draw importance-weighted candidates from the three proposal kinds and
//! check that the weighted sample integrates the distribution of interest.

use basq::gaussian::DiagGaussian;
use basq::gp::{AlphaRule, RbfKernelParams, WarpedGpModel};
use basq::points::Points;
use basq::proposal::{af_mixture_build, propose, ProposalConfig, ProposalKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> basq::error::Result<()> {
    let prior = DiagGaussian::isotropic(vec![0.0, 0.0], 2.0)?;
    let x = Points::from_rows(2, &[[0.0, 0.0], [1.0, 0.5], [-1.0, 1.0], [0.5, -1.5], [2.0, 2.0]])?;
    let y = [1.0, 0.6, 0.3, 0.2, 0.05];
    let model = WarpedGpModel::fit(&x, &y, RbfKernelParams::isotropic(1.0, 1.0, 2)?, AlphaRule::default())?;

    let acq = af_mixture_build(&model, &prior, 5000)?;
    println!("acquisition mixture: {} components, normalizer {:.5}", acq.sparse.len(), acq.normalizer);

    for kind in [ProposalKind::Ivr, ProposalKind::Igb, ProposalKind::Ub] {
        let cfg = ProposalConfig { kind, r: 0.5, n_samples: 5000, supersample_ratio: 20 };
        let set = propose(Some(&model), &prior, &cfg, &mut ChaCha8Rng::seed_from_u64(1))?;
        let mass = set.total_mass() / set.len() as f64;
        let max = set.weights.iter().cloned().fold(0.0, f64::max);
        println!("{kind:?}: mean weight {mass:.5} (estimates the mass of |m|pi), max weight {max:.4}");
    }
    Ok(())
}
