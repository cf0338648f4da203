//! Invariants over randomly generated models, point sets and kernels.

use basq::bench::SyntheticProblem;
use basq::engine::{EngineConfig, EngineState};
use basq::gaussian::DiagGaussian;
use basq::gp::{AlphaRule, RbfKernelParams, WarpedGpModel};
use basq::nystrom::NystromBasis;
use basq::points::{Points, WeightedPointSet};
use basq::quadrature::{evidence, PosteriorModel};
use basq::recombination::{recombine, verify_reduction};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, half_width: f64) -> Points {
    Points::from_flat(d, (0..n * d).map(|_| rng.random_range(-half_width..half_width)).collect()).unwrap()
}

fn random_model(seed: u64, n: usize, d: usize, l: f64) -> WarpedGpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_points(&mut rng, n, d, 3.0);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
    WarpedGpModel::fit(&x, &y, RbfKernelParams::new(rng.random_range(0.3..3.0), vec![l; d]).unwrap(), AlphaRule::default()).unwrap()
}

/// Points at least `gap` apart, so the Gram matrix factorizes without heavy jitter.
fn separated_model(seed: u64, n: usize, d: usize, l: f64, gap: f64) -> WarpedGpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Points::new(d);
    while x.len() < n {
        let cand: Vec<f64> = (0..d).map(|_| rng.random_range(-gap * n as f64..gap * n as f64)).collect();
        let far = x.iter().all(|p| p.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= gap);
        if far {
            x.push(&cand).unwrap();
        }
    }
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
    WarpedGpModel::fit(&x, &y, RbfKernelParams::new(rng.random_range(0.3..3.0), vec![l; d]).unwrap(), AlphaRule::default()).unwrap()
}

fn prior(d: usize) -> DiagGaussian {
    DiagGaussian::isotropic(vec![0.0; d], 2.0).unwrap()
}

fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) {
    let mut runner = TestRunner::new(Config { cases: 24, failure_persistence: None, ..Config::default() });
    if let Err(e) = runner.run(&strategy, test) {
        panic!("{e}");
    }
}

pub fn recombination_keeps_a_positive_subset_with_exact_moments() {
    check((0u64..1000, 1usize..=3, 4usize..=24, 200usize..800), |(seed, d, n, big_n)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, big_n, d, 3.0);
        let w: Vec<f64> = (0..big_n).map(|_| rng.random_range(0.01..1.0)).collect();
        let set = WeightedPointSet::new(pts, w).unwrap();
        let kernel = RbfKernelParams::isotropic(1.0, 1.0, d).unwrap();
        let basis = NystromBasis::build(&kernel, random_points(&mut rng, 3 * n, d, 3.0), n - 1).unwrap();
        let phi = |p: &Points| basis.eval_test_functions(&kernel, p);
        let out = recombine(&set, phi, n, None).unwrap();

        prop_assert!(out.set.len() <= n);
        prop_assert!(out.set.weights.iter().all(|w| *w > 0.0));
        for (k, &i) in out.indices.iter().enumerate() {
            prop_assert_eq!(out.set.points.row(k), set.points.row(i));
        }
        let rep = verify_reduction(&set, &out.set, phi).unwrap();
        prop_assert!(rep.max_moment_error <= 1e-8, "moment error {}", rep.max_moment_error);
        prop_assert!(rep.mass_error <= 1e-8, "mass error {}", rep.mass_error);
        Ok(())
    });
}

pub fn warped_mean_reproduces_observations() {
    check((0u64..1000, 1usize..=3, 1usize..=10), |(seed, d, n)| {
        let m = separated_model(seed, n, d, 0.8, 0.8);
        for (x, y) in m.x().iter().zip(m.y()) {
            let (mean, _) = m.predict_likelihood(x).unwrap();
            prop_assert!((mean - y).abs() <= 1e-5, "{} vs {}", mean, y);
        }
        Ok(())
    });
}

pub fn evidence_variance_is_nonnegative() {
    check((0u64..1000, 1usize..=4, 1usize..=30, 0.1f64..3.0), |(seed, d, n, l)| {
        let m = random_model(seed, n, d, l);
        let ev = evidence(&m, &prior(d)).unwrap();
        prop_assert!(ev.variance >= 0.0 && ev.variance.is_finite());
        prop_assert!(ev.mean > 0.0 && ev.mean.is_finite());
        Ok(())
    });
}

pub fn posterior_integrates_to_one() {
    check((0u64..1000, 1usize..=4, 1usize..=10), |(seed, d, n)| {
        let m = separated_model(seed, n, d, 0.9, 0.9);
        let post = PosteriorModel::new(m, prior(d)).unwrap();
        prop_assert!((post.total_mass() - 1.0).abs() <= 1e-8, "mass {}", post.total_mass());
        Ok(())
    });
}

pub fn nystrom_residual_shrinks_with_basis_size() {
    check((0u64..1000, 1usize..=3), |(seed, d)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel = RbfKernelParams::isotropic(1.5, 0.9, d).unwrap();
        let landmarks = random_points(&mut rng, 60, d, 2.5);
        let probe = random_points(&mut rng, 200, d, 3.0);
        let mut last = f64::INFINITY;
        for k in [1, 2, 4, 8, 16, 32, 59] {
            let basis = NystromBasis::build(&kernel, landmarks.clone(), k).unwrap();
            let trace: f64 = basis.residual_diag(&kernel, &probe).unwrap().iter().sum();
            prop_assert!(trace <= last + 1e-9, "k={}: {} after {}", k, trace, last);
            last = trace;
        }
        Ok(())
    });
}

pub fn traces_are_deterministic_per_seed() {
    let p = SyntheticProblem::by_name("branin", None, 0).unwrap();
    let lik = p.likelihood_fn();
    let cfg = EngineConfig { batch_size: 20, n_rec: 2000, n_nys: 40, supersample_ratio: 10, budget: 60, seed: 4, ..EngineConfig::desk() };
    let run = || {
        let mut st = EngineState::init(p.prior.clone(), &lik, None, cfg.clone()).unwrap();
        let (_, _, trace) = st.run(&lik).unwrap();
        (trace.iter().map(|t| (t.evals, t.ez.to_bits(), t.var_z.to_bits())).collect::<Vec<_>>(), st.model().x().clone())
    };
    let (a, xa) = run();
    let (b, xb) = run();
    assert_eq!(a, b);
    assert_eq!(xa, xb);
}
