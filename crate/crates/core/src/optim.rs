//! Box-constrained quasi-Newton minimizer for the handful of kernel hyperparameters.

/// Smooth objective over a low-dimensional box. Returning `None` marks an
/// infeasible point (e.g. a failed factorization) and is treated as `+inf`.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> Option<f64>;
    fn value_and_grad(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone)]
pub struct BfgsSettings {
    pub max_evals: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self { max_evals: 200, grad_tol: 1e-6, step_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(*lo, *hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected BFGS with Armijo backtracking. Never returns a point worse than `x0`
/// (if `x0` itself is feasible).
pub fn minimize_bfgs<O: Objective>(
    obj: &mut O,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &BfgsSettings,
) -> Option<Minimum> {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut evals = 1;
    let (mut fx, mut g) = obj.value_and_grad(&x)?;
    // inverse Hessian approximation, row-major
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }

    while evals < settings.max_evals {
        // gradient projected onto the active box
        let pg: Vec<f64> = (0..n)
            .map(|i| {
                if (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0) {
                    0.0
                } else {
                    g[i]
                }
            })
            .collect();
        if pg.iter().map(|v| v * v).sum::<f64>().sqrt() < settings.grad_tol {
            break;
        }
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &pg)).collect();
        if dot(&dir, &pg) >= 0.0 {
            // lost descent; reset curvature
            dir = pg.iter().map(|v| -v).collect();
            h.iter_mut().enumerate().for_each(|(k, v)| *v = if k % (n + 1) == 0 { 1.0 } else { 0.0 });
        }
        let slope = dot(&dir, &pg);
        let mut step = 1.0;
        let mut accepted = None;
        while evals < settings.max_evals {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            project(&mut trial, lower, upper);
            evals += 1;
            if let Some(ft) = obj.value(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
        let Some(xn) = accepted else { break };
        if evals >= settings.max_evals {
            if let Some(fv) = obj.value(&xn) {
                if fv < fx {
                    x = xn;
                    fx = fv;
                }
            }
            break;
        }
        evals += 1;
        let Some((fn_, gn)) = obj.value_and_grad(&xn) else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &yv)).collect();
            let yhy = dot(&yv, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        if step_norm < settings.step_tol || improvement.abs() < 1e-12 * (1.0 + fx.abs()) {
            break;
        }
    }
    Some(Minimum { x, value: fx, evals })
}
