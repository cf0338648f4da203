//! Fit the warped GP to a handful of likelihood values and integrate it in
//! closed form against a Gaussian prior.

use basq::gaussian::DiagGaussian;
use basq::gp::{AlphaRule, RbfKernelParams, WarpedGpModel};
use basq::points::Points;
use basq::quadrature::{evidence, PosteriorModel};

fn likelihood(x: &[f64]) -> f64 {
    (-0.5 * (x[0] - 0.5).powi(2) / 0.3).exp()
}

fn main() -> basq::error::Result<()> {
    let prior = DiagGaussian::isotropic(vec![0.0], 2.0)?;
    let xs: Vec<f64> = (0..15).map(|i| -3.0 + 6.0 * i as f64 / 14.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| likelihood(&[*x])).collect();
    let x = Points::from_flat(1, xs)?;
    let model = WarpedGpModel::fit(&x, &ys, RbfKernelParams::isotropic(1.0, 0.5, 1)?, AlphaRule::default())?;

    let ev = evidence(&model, &prior)?;
    let truth = (0.3f64 / 2.3).sqrt() * (-0.25f64 / (2.0 * 2.3)).exp();
    println!("E[Z] = {:.6}  sd = {:.2e}  truth = {truth:.6}", ev.mean, ev.variance.sqrt());

    let post = PosteriorModel::with_evidence(model, prior, ev.mean)?;
    println!("posterior mixture: {} components, total mass {:.12}", post.mixture().len(), post.total_mass());
    for t in [-1.0, 0.0, 0.5, 1.0, 2.0] {
        println!("  p({t:+.1}) = {:.5}", post.joint_density(&[t])?);
    }
    Ok(())
}
