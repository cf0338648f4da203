//! Carathéodory reduction of a weighted point set.
//!
//! Given `N` weighted points and up to `n - 1` test functions, selects at most `n`
//! of the points with new positive weights such that every test-function moment
//! and the total mass are unchanged. Large inputs are reduced hierarchically: the
//! points are split into `2m` groups, the group barycenters are reduced to `m`,
//! and only the surviving groups are kept, until a single direct reduction
//! finishes the job.

use std::collections::HashMap;

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::error::{BasqError, Result};
use crate::points::{Points, WeightedPointSet};

/// Result of a reduction together with where each output point came from.
#[derive(Debug, Clone)]
pub struct Recombined {
    pub set: WeightedPointSet,
    /// Index into the input of each output point.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionReport {
    /// Largest `|out_i - in_i| / (1 + |in_i|)` over test-function moments.
    pub max_moment_error: f64,
    /// `|out mass - in mass| / (1 + |in mass|)`.
    pub mass_error: f64,
    pub support: usize,
}

/// Reduces `input` to at most `n` points preserving the moments of `phi` (rows are
/// test functions, columns points) and the total mass.
///
/// With `residual` set, the reduction is proper: the weighted sum of the residual
/// values never increases, because every elimination direction is oriented to
/// lower it.
pub fn recombine<F>(input: &WeightedPointSet, phi: F, n: usize, residual: Option<&dyn Fn(&Points) -> Result<Vec<f64>>>) -> Result<Recombined>
where
    F: Fn(&Points) -> Result<DMatrix<f64>>,
{
    let big_n = input.len();
    if big_n < n || n == 0 {
        return Err(BasqError::TooFewPoints { needed: n.max(1), got: big_n });
    }
    let feats = phi(&input.points)?;
    if feats.ncols() != big_n {
        return Err(BasqError::DimensionMismatch { expected: big_n, got: feats.ncols() });
    }
    if feats.nrows() + 1 > n {
        return Err(BasqError::InvalidArgument(format!("{} test functions need a support of {}, only {n} allowed", feats.nrows(), feats.nrows() + 1)));
    }
    let resid = residual.map(|r| r(&input.points)).transpose()?;

    // merge bitwise-duplicate points into their first occurrence
    let mut first: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut weights = input.weights.clone();
    for i in 0..big_n {
        let key: Vec<u64> = input.points.row(i).iter().map(|c| c.to_bits()).collect();
        match first.get(&key) {
            Some(&j) => {
                weights[j] += weights[i];
                weights[i] = 0.0;
            }
            None => {
                first.insert(key, i);
            }
        }
    }
    let active: Vec<usize> = (0..big_n).filter(|&i| weights[i] > 0.0).collect();

    let (kept, w) = if active.len() <= n {
        (active, weights)
    } else {
        reduce_tree(&feats, resid.as_deref(), weights, active)?
    };

    if let Some(s) = &resid {
        let before: f64 = input.weights.iter().zip(s).map(|(a, b)| a * b).sum();
        let after: f64 = kept.iter().map(|&i| w[i] * s[i]).sum();
        if after > before + 1e-8 {
            warn!("proper recombination violated: residual mass {after} > {before}");
        }
    }
    let set = WeightedPointSet::new(input.points.select(&kept), kept.iter().map(|&i| w[i]).collect())?;
    Ok(Recombined { set, indices: kept })
}

/// Column `i` of the constraint system: test functions, optional residual, then 1.
fn column(feats: &DMatrix<f64>, i: usize, out: &mut [f64]) {
    let k = feats.nrows();
    for r in 0..k {
        out[r] = feats[(r, i)];
    }
    out[k] = 1.0;
}

fn reduce_tree(feats: &DMatrix<f64>, resid: Option<&[f64]>, mut w: Vec<f64>, mut active: Vec<usize>) -> Result<(Vec<usize>, Vec<f64>)> {
    let m = feats.nrows() + 1;
    let mut col = vec![0.0; m];
    let mut rounds = 0;
    while active.len() > 2 * m {
        rounds += 1;
        let groups = split_even(&active, 2 * m);
        let mut bary = DMatrix::zeros(m, groups.len());
        let mut mass = vec![0.0; groups.len()];
        let mut gres = vec![0.0; groups.len()];
        for (g, members) in groups.iter().enumerate() {
            let total: f64 = members.iter().map(|&i| w[i]).sum();
            for &i in *members {
                column(feats, i, &mut col);
                for r in 0..m {
                    bary[(r, g)] += w[i] / total * col[r];
                }
                if let Some(s) = resid {
                    gres[g] += w[i] / total * s[i];
                }
            }
            mass[g] = total;
        }
        let new_mass = reduce_basic(&bary, resid.map(|_| gres.as_slice()), mass.clone())?;
        let mut next = Vec::with_capacity(active.len() / 2 + 1);
        for (g, members) in groups.iter().enumerate() {
            if new_mass[g] > 0.0 {
                let scale = new_mass[g] / mass[g];
                for &i in *members {
                    w[i] *= scale;
                    next.push(i);
                }
            } else {
                for &i in *members {
                    w[i] = 0.0;
                }
            }
        }
        active = next;
    }
    let mut a = DMatrix::zeros(m, active.len());
    for (c, &i) in active.iter().enumerate() {
        column(feats, i, &mut col);
        a.column_mut(c).copy_from_slice(&col);
    }
    let sres: Option<Vec<f64>> = resid.map(|s| active.iter().map(|&i| s[i]).collect());
    let local = reduce_basic(&a, sres.as_deref(), active.iter().map(|&i| w[i]).collect())?;
    debug!("recombination finished after {rounds} grouping rounds");
    let mut kept = Vec::new();
    for (c, &i) in active.iter().enumerate() {
        w[i] = local[c];
        if local[c] > 0.0 {
            kept.push(i);
        }
    }
    Ok((kept, w))
}

/// Splits `idx` into `parts` contiguous chunks whose sizes differ by at most one.
fn split_even(idx: &[usize], parts: usize) -> Vec<&[usize]> {
    let (q, r) = (idx.len() / parts, idx.len() % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = q + usize::from(p < r);
        if len > 0 {
            out.push(&idx[start..start + len]);
        }
        start += len;
    }
    out
}

/// Orthonormal basis of the null space of a wide `a`: the right singular vectors
/// belonging to the `cols - rows` zero singular values of `a` padded with zero rows.
fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if cols <= rows {
        return DMatrix::zeros(cols, 0);
    }
    let scale = a.amax();
    if scale == 0.0 {
        return DMatrix::identity(cols, cols);
    }
    let mut square = DMatrix::zeros(cols, cols);
    square.view_mut((0, 0), (rows, cols)).copy_from(&(a / scale));
    let svd = square.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]).then(i.cmp(&j)));
    let mut ns = DMatrix::zeros(cols, cols - rows);
    for (k, &i) in order[..cols - rows].iter().enumerate() {
        ns.column_mut(k).copy_from(&vt.row(i).transpose());
    }
    ns
}

/// Direct reduction of a small system: repeatedly moves along a null vector of `a`
/// until a weight reaches zero. Returns the new weights (zeros mark removed points).
fn reduce_basic(a: &DMatrix<f64>, resid: Option<&[f64]>, mut w: Vec<f64>) -> Result<Vec<f64>> {
    let mut ns = null_space(a);
    let mut alive: Vec<bool> = w.iter().map(|x| *x > 0.0).collect();
    for k in 0..ns.ncols() {
        let mut v: Vec<f64> = ns.column(k).iter().copied().collect();
        for (j, a) in alive.iter().enumerate() {
            if !a {
                v[j] = 0.0;
            }
        }
        let flip = match resid {
            Some(s) => v.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() < 0.0,
            None => false,
        };
        if flip {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if vmax == 0.0 {
            continue;
        }
        // lowest index wins ties
        let mut best: Option<(usize, f64)> = None;
        for j in 0..w.len() {
            if alive[j] && v[j] > 1e-14 * vmax {
                let t = w[j] / v[j];
                if best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((j, t));
                }
            }
        }
        let Some((j0, t)) = best else {
            if resid.is_some() {
                continue;
            }
            return Err(BasqError::SingularElimination);
        };
        for j in 0..w.len() {
            if alive[j] {
                w[j] = (w[j] - t * v[j]).max(0.0);
            }
        }
        w[j0] = 0.0;
        alive[j0] = false;
        for j in 0..w.len() {
            if alive[j] && w[j] == 0.0 {
                alive[j] = false;
            }
        }
        // keep later directions inside the reduced support
        for k2 in k + 1..ns.ncols() {
            let f = ns[(j0, k2)] / v[j0];
            if f != 0.0 {
                for j in 0..w.len() {
                    ns[(j, k2)] -= f * v[j];
                }
            }
            ns[(j0, k2)] = 0.0;
        }
    }
    Ok(w)
}

/// Moment and mass discrepancies between `input` and `output` under `phi`.
pub fn verify_reduction<F>(input: &WeightedPointSet, output: &WeightedPointSet, phi: F) -> Result<ReductionReport>
where
    F: Fn(&Points) -> Result<DMatrix<f64>>,
{
    let fi = phi(&input.points)?;
    let fo = phi(&output.points)?;
    let mut max_moment_error = 0.0f64;
    for r in 0..fi.nrows() {
        let a: f64 = fi.row(r).iter().zip(&input.weights).map(|(x, w)| x * w).sum();
        let b: f64 = fo.row(r).iter().zip(&output.weights).map(|(x, w)| x * w).sum();
        max_moment_error = max_moment_error.max((a - b).abs() / (1.0 + a.abs()));
    }
    let (mi, mo) = (input.total_mass(), output.total_mass());
    Ok(ReductionReport { max_moment_error, mass_error: (mi - mo).abs() / (1.0 + mi.abs()), support: output.len() })
}
