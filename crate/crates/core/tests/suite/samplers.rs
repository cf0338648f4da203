//! Distributional checks for the acquisition sampler and the weighted proposal.

use basq::gaussian::DiagGaussian;
use basq::gp::{AlphaRule, RbfKernelParams, WarpedGpModel};
use basq::points::Points;
use basq::proposal::{af_mixture_build, propose, propose_detailed, smc_sample_af, ProposalConfig, ProposalKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(seed: u64, n: usize, d: usize) -> WarpedGpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Points::from_flat(d, (0..n * d).map(|_| rng.random_range(-2.5..2.5)).collect()).unwrap();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..3.0)).collect();
    WarpedGpModel::fit(&x, &y, RbfKernelParams::new(1.5, vec![0.8; d]).unwrap(), AlphaRule::default()).unwrap()
}

fn prior(d: usize) -> DiagGaussian {
    DiagGaussian::isotropic(vec![0.0; d], 2.0).unwrap()
}

pub fn acquisition_samples_match_exact_cdf() {
    for seed in [3, 4, 5] {
        acquisition_ks(seed);
    }
}

fn acquisition_ks(seed: u64) {
    let m = model(seed, 6, 1);
    let p = prior(1);
    let n = 100_000;
    let pts = smc_sample_af(&m, &p, n, 100, 20_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut xs: Vec<f64> = pts.iter().map(|r| r[0]).collect();
    xs.sort_by(f64::total_cmp);

    let (lo, hi, k) = (-12.0, 12.0, 24_001);
    let h = (hi - lo) / (k - 1) as f64;
    let grid: Vec<f64> = (0..k).map(|i| lo + i as f64 * h).collect();
    let dens: Vec<f64> = grid.iter().map(|x| m.predict_warped(&[*x]).unwrap().1 * p.pdf(&[*x]).unwrap()).collect();
    let mut cdf = vec![0.0; k];
    for i in 1..k {
        cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * h;
    }
    let total = cdf[k - 1];
    let cdf_at = |x: f64| {
        let t = ((x - lo) / h).clamp(0.0, (k - 1) as f64);
        let i = (t.floor() as usize).min(k - 2);
        (cdf[i] + (t - i as f64) * (cdf[i + 1] - cdf[i])) / total
    };
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let c = cdf_at(*x);
            (c - i as f64 / n as f64).abs().max((c - (i + 1) as f64 / n as f64).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks <= 0.01, "model {seed}: KS statistic {ks}");
}

pub fn importance_weights_reproduce_integrals_of_interest() {
    let m = model(5, 6, 1);
    let p = prior(1);
    let test_fn = |x: f64| (1.3 * x).cos() + 0.2 * x * x;
    let (lo, hi, k) = (-12.0, 12.0, 24_001);
    let h = (hi - lo) / (k - 1) as f64;
    let truth: f64 = (0..k)
        .map(|i| {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == k - 1 { 0.5 } else { 1.0 };
            w * h * test_fn(x) * m.mean_warped(&[x]).abs() * p.pdf(&[x]).unwrap()
        })
        .sum();
    for kind in [ProposalKind::Ivr, ProposalKind::Igb] {
        for rep in 0..20 {
            let cfg = ProposalConfig { kind, r: 0.5, n_samples: 4000, supersample_ratio: 20 };
            let set = propose(Some(&m), &p, &cfg, &mut ChaCha8Rng::seed_from_u64(100 + rep)).unwrap();
            let vals: Vec<f64> = set.points.iter().zip(&set.weights).map(|(x, w)| w * test_fn(x[0])).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((mean - truth).abs() <= 4.0 * sd / n.sqrt(), "{kind:?} rep {rep}: {mean} vs {truth} (sd {sd})");
        }
    }
}

pub fn igb_draws_respect_the_mixing_ratio() {
    let m = model(9, 8, 2);
    for r in [0.1, 0.5, 0.9] {
        let cfg = ProposalConfig { kind: ProposalKind::Igb, r, n_samples: 1000, supersample_ratio: 10 };
        let d = propose_detailed(Some(&m), &prior(2), &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let frac_q = 1.0 - d.n_from_f as f64 / d.samples.len() as f64;
        assert!(frac_q >= r - 0.05, "r={r}: fraction {frac_q}");
    }
}

pub fn upper_bound_proposal_draws_only_from_acquisition() {
    let m = model(9, 8, 2);
    let cfg = ProposalConfig { kind: ProposalKind::Ub, r: 0.2, n_samples: 500, supersample_ratio: 10 };
    let d = propose_detailed(Some(&m), &prior(2), &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(d.n_from_f, 0);
}

pub fn pruning_drops_components_below_inverse_sample_count() {
    let m = model(12, 15, 2);
    let p = prior(2);
    let mut last = 0;
    for n_rec in [10, 100, 1000, 100_000] {
        let acq = af_mixture_build(&m, &p, n_rec).unwrap();
        assert!(acq.sparse.weights().iter().all(|w| *w >= 1.0 / n_rec as f64));
        assert!(acq.sparse.len() >= last);
        last = acq.sparse.len();
    }
}
