//! Reduce 5000 weighted points to 32 while keeping the moments of 31 Nyström
//! test functions and the total mass.

use basq::gp::RbfKernelParams;
use basq::nystrom::NystromBasis;
use basq::points::{Points, WeightedPointSet};
use basq::recombination::{recombine, verify_reduction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> basq::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n_points = 5000;
    let pts = Points::from_flat(2, (0..2 * n_points).map(|_| rng.random_range(-3.0..3.0)).collect())?;
    let weights = (0..n_points).map(|_| rng.random::<f64>()).collect();
    let input = WeightedPointSet::new(pts, weights)?;

    let kernel = RbfKernelParams::isotropic(1.0, 0.8, 2)?;
    let landmarks = input.points.select(&(0..200).collect::<Vec<_>>());
    let basis = NystromBasis::build(&kernel, landmarks, 31)?;
    let phi = |p: &Points| basis.eval_test_functions(&kernel, p);

    let t = std::time::Instant::now();
    let out = recombine(&input, phi, 32, None)?;
    let report = verify_reduction(&input, &out.set, phi)?;
    println!("reduced {} -> {} points in {:?}", input.len(), out.set.len(), t.elapsed());
    println!("max moment error {:.2e}, mass error {:.2e}", report.max_moment_error, report.mass_error);

    let resid = |p: &Points| basis.residual_sqrt_diag(&kernel, p);
    let proper = recombine(&input, phi, 32, Some(&resid))?;
    let before: f64 = resid(&input.points)?.iter().zip(&input.weights).map(|(a, b)| a * b).sum();
    let after: f64 = resid(&proper.set.points)?.iter().zip(&proper.set.weights).map(|(a, b)| a * b).sum();
    println!("proper reduction: residual mass {before:.4} -> {after:.4}");
    Ok(())
}
