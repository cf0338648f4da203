//! Closed-form quadrature against brute-force numerical integration.

use basq::gaussian::DiagGaussian;
use basq::gp::{AlphaRule, RbfKernelParams, WarpedGpModel};
use basq::points::Points;
use basq::quadrature::{evidence, likelihood_variance_mixture_expansion, variance_second_term_naive, variance_second_term_separable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng, d: usize) -> WarpedGpModel {
    let n = rng.random_range(3..=6);
    let x = Points::from_flat(d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    let ls = (0..d).map(|_| rng.random_range(0.6..1.2)).collect();
    WarpedGpModel::fit(&x, &y, RbfKernelParams::new(rng.random_range(0.5..2.0), ls).unwrap(), AlphaRule::default()).unwrap()
}

fn grid(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / (n - 1) as f64;
    ((0..n).map(|i| lo + i as f64 * h).collect(), h)
}

fn npdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// `E[Z] = alpha + 1/2 int m^2 pi` on a full d-dimensional grid (d <= 2).
fn mean_by_grid(m: &WarpedGpModel, prior: &DiagGaussian) -> f64 {
    let (g, h) = grid(-12.0, 12.0, 601);
    let mut acc = 0.0;
    if m.dim() == 1 {
        for a in &g {
            let mt = m.mean_warped(&[*a]);
            acc += mt * mt * prior.pdf(&[*a]).unwrap() * h;
        }
    } else {
        for a in &g {
            for b in &g {
                let mt = m.mean_warped(&[*a, *b]);
                acc += mt * mt * prior.pdf(&[*a, *b]).unwrap() * h * h;
            }
        }
    }
    m.alpha() + 0.5 * acc
}

/// `Var[Z] = int int m(x) C(x, x') m(x') pi pi`, with every kernel product integrated
/// one dimension at a time on a two-dimensional grid and multiplied across dimensions.
fn variance_by_grid(m: &WarpedGpModel, prior: &DiagGaussian) -> f64 {
    let n = m.len();
    let d = m.dim();
    let ls = &m.params().lengthscales;
    let (g, h) = grid(-12.0, 12.0, 801);
    let k1 = |a: f64, b: f64, l: f64| (-(a - b) * (a - b) / (2.0 * l * l)).exp();
    let x = m.x();
    let om = m.omega();
    let vp = m.params().variance;
    // single[i][j] = int k_i k_j pi; double[i][j] = int int k_i(x) K(x, x') k_j(x') pi pi
    let mut single = vec![vec![1.0; n]; n];
    let mut double = vec![vec![1.0; n]; n];
    for k in 0..d {
        let (mu, s) = (prior.mean()[k], prior.var_diag()[k]);
        let pw: Vec<f64> = g.iter().map(|t| npdf(*t, mu, s) * h).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| g.iter().map(|t| k1(x.row(i)[k], *t, ls[k])).collect()).collect();
        let kk: Vec<Vec<f64>> = g.iter().map(|a| g.iter().map(|b| k1(*a, *b, ls[k])).collect()).collect();
        for i in 0..n {
            let ui: Vec<f64> = (0..g.len()).map(|p| rows[i][p] * pw[p]).collect();
            let kui: Vec<f64> = (0..g.len()).map(|q| (0..g.len()).map(|p| ui[p] * kk[p][q]).sum()).collect();
            for j in 0..n {
                single[i][j] *= (0..g.len()).map(|p| ui[p] * rows[j][p]).sum::<f64>();
                double[i][j] *= (0..g.len()).map(|q| kui[q] * rows[j][q] * pw[q]).sum::<f64>();
            }
        }
    }
    let v3 = vp * vp * vp;
    let mut first = 0.0;
    let mut b = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            first += om[i] * om[j] * double[i][j] * v3;
            b[i] += single[i][j] * vp * vp * om[j];
        }
    }
    let oi = m.omega_inv();
    let second: f64 = (0..n).map(|i| (0..n).map(|j| b[i] * oi[(i, j)] * b[j]).sum::<f64>()).sum();
    first - second
}

pub fn evidence_matches_grid_quadrature_in_one_and_two_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in [1, 2] {
        let prior = DiagGaussian::new(vec![0.3; d], vec![1.5; d]).unwrap();
        for _ in 0..10 {
            let m = random_model(&mut rng, d);
            let ev = evidence(&m, &prior).unwrap();
            let mean = mean_by_grid(&m, &prior);
            assert!((ev.mean - mean).abs() <= 1e-6 * mean.abs(), "d={d}: {} vs {mean}", ev.mean);
            let var = variance_by_grid(&m, &prior);
            assert!((ev.variance - var).abs() <= 1e-6 * var.abs().max(1e-12), "d={d}: {} vs {var}", ev.variance);
        }
    }
}

pub fn separable_variance_term_matches_quadruple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [2, 5, 8, 12] {
        let x = Points::from_flat(2, (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let m = WarpedGpModel::fit(&x, &y, RbfKernelParams::new(1.3, vec![0.6, 0.8]).unwrap(), AlphaRule::default()).unwrap();
        let prior = DiagGaussian::isotropic(vec![0.0, 0.0], 2.0).unwrap();
        let a = variance_second_term_naive(&m, &prior).unwrap();
        let b = variance_second_term_separable(&m, &prior).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "n={n}: {a} vs {b}");
    }
}

pub fn mixture_expansion_matches_likelihood_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = random_model(&mut rng, 2);
    for _ in 0..1000 {
        let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let (_, cl) = m.predict_likelihood(&x).unwrap();
        let mix = likelihood_variance_mixture_expansion(&m, &x).unwrap();
        assert!((cl - mix).abs() <= 1e-6 * cl.abs().max(1e-10), "{cl} vs {mix}");
    }
}
