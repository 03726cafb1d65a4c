//! Hard-margin perceptron through the origin.
//!
//! Solves `min ½‖w‖² s.t. y_i w·x_i ≥ 1` with a Mehrotra predictor-corrector
//! interior-point method; each iteration factors the `d x d` matrix
//! `I + Zᵀ diag(λ/s) Z`. The support set read off the interior point is then
//! polished by solving `Q_SS β = 1` exactly with active-set corrections; if
//! the polished point satisfies the KKT conditions it is the exact optimum.
//! Otherwise the interior point is returned once the duality bound
//! `κ* ≤ 1/√(2D)` is within `tol` of the achieved margin.

use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::math::linalg::{axpy, cholesky, cholesky_solve, dot, norm};
use crate::math::roots::solve_dense;

const MAX_ITER: usize = 200;
const MAX_POLISH_STEPS: usize = 60;
const FEAS_TOL: f64 = 1e-11;
const STEP_FRACTION: f64 = 0.995;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMarginFit {
    /// Unit norm.
    pub weights: Vec<f64>,
    pub kappa: f64,
    pub iterations: usize,
    pub support: Vec<usize>,
    /// True if the KKT conditions hold exactly at the support set.
    pub exact: bool,
}

/// Rows `y_i x_i`.
struct Signed {
    z: Vec<f64>,
    n: usize,
    d: usize,
}

impl Signed {
    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }

    fn apply(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(w, self.row(i))).collect()
    }

    fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                axpy(vi, self.row(i), &mut out);
            }
        }
        out
    }

    fn min_margin(&self, w: &[f64]) -> f64 {
        self.apply(w).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Lower triangle of `I + Zᵀ diag(dg) Z`, factored in place.
    fn normal_matrix(&self, dg: &[f64]) -> Option<Vec<f64>> {
        let d = self.d;
        let mut m = vec![0.0; d * d];
        for i in 0..self.n {
            let zi = self.row(i);
            for a in 0..d {
                let t = dg[i] * zi[a];
                if t == 0.0 {
                    continue;
                }
                let row = &mut m[a * d..a * d + a + 1];
                for (mb, zb) in row.iter_mut().zip(zi) {
                    *mb += t * zb;
                }
            }
        }
        for a in 0..d {
            m[a * d + a] += 1.0;
        }
        cholesky(&mut m, d).then_some(m)
    }
}

fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, &v)| v < 0.0)
        .map(|(&xi, &v)| -xi / v)
        .fold(1.0, f64::min)
}

fn finish(z: &Signed, w: &[f64], iterations: usize, support: Vec<usize>, exact: bool) -> MaxMarginFit {
    let wn = norm(w);
    let weights: Vec<f64> = w.iter().map(|v| v / wn).collect();
    MaxMarginFit { kappa: z.min_margin(&weights), weights, iterations, support, exact }
}

pub fn train_max_margin(set: &LabeledSet, tol: f64) -> Result<MaxMarginFit> {
    let (n, d) = (set.n, set.d);
    if n == 0 {
        return Err(Error::EmptyBatch("max-margin training on an empty set".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let mut zv = set.inputs.clone();
    for i in 0..n {
        let y = set.labels[i];
        zv[i * d..(i + 1) * d].iter_mut().for_each(|v| *v *= y);
    }
    let z = Signed { z: zv, n, d };
    if let Some(i) = (0..n).find(|&i| z.row(i).iter().all(|&v| v == 0.0)) {
        return Err(Error::Infeasible(format!("sample {i} is the zero vector")));
    }

    let mut w = vec![0.0; d];
    let mut s = vec![1.0; n];
    let mut lam = vec![1.0; n];
    for it in 1..=MAX_ITER {
        let zw = z.apply(&w);
        let ztl = z.apply_t(&lam);
        let r_d: Vec<f64> = w.iter().zip(&ztl).map(|(a, b)| a - b).collect();
        let r_p: Vec<f64> = (0..n).map(|i| zw[i] - s[i] - 1.0).collect();
        let mu = dot(&lam, &s) / n as f64;

        let sum_lam: f64 = lam.iter().sum();
        if sum_lam > 1e12 {
            return Err(Error::Infeasible(format!("multipliers diverge (Σλ = {sum_lam:.3e})")));
        }
        let wn = norm(&w);
        let min_zw = zw.iter().cloned().fold(f64::INFINITY, f64::min);
        let kappa_lo = if wn > 0.0 { min_zw / wn } else { f64::NEG_INFINITY };
        let dual = sum_lam - 0.5 * dot(&ztl, &ztl);
        let kappa_hi = if dual > 0.0 { (2.0 * dual).sqrt().recip() } else { f64::INFINITY };
        let close = kappa_lo > 0.0 && kappa_hi - kappa_lo < 1e-3 * kappa_hi;
        if close {
            if let Some((w_exact, support)) = polish(&z, &lam, &s) {
                return Ok(finish(&z, &w_exact, it, support, true));
            }
        }
        if kappa_lo > 0.0 && kappa_hi - kappa_lo <= tol {
            let support = (0..n).filter(|&i| lam[i] > s[i]).collect();
            return Ok(finish(&z, &w, it, support, false));
        }

        let dg: Vec<f64> = (0..n).map(|i| lam[i] / s[i]).collect();
        let Some(m) = z.normal_matrix(&dg) else {
            return Err(Error::NonConvergence("interior-point normal matrix lost definiteness".into()));
        };
        // solves for a complementarity target r_c; returns (Δw, Δs, Δλ)
        let solve = |r_c: &[f64]| {
            let v: Vec<f64> = (0..n).map(|i| r_c[i] / s[i] + dg[i] * r_p[i]).collect();
            let ztv = z.apply_t(&v);
            let mut dw: Vec<f64> = (0..d).map(|a| -r_d[a] - ztv[a]).collect();
            cholesky_solve(&m, d, &mut dw);
            let zdw = z.apply(&dw);
            let ds: Vec<f64> = (0..n).map(|i| zdw[i] + r_p[i]).collect();
            let dl: Vec<f64> = (0..n).map(|i| -(r_c[i] + lam[i] * ds[i]) / s[i]).collect();
            (dw, ds, dl)
        };
        let r_aff: Vec<f64> = (0..n).map(|i| lam[i] * s[i]).collect();
        let (_, ds_a, dl_a) = solve(&r_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_aff = (0..n).map(|i| (s[i] + a_aff * ds_a[i]) * (lam[i] + a_aff * dl_a[i])).sum::<f64>() / n as f64;
        let sigma = (mu_aff / mu).powi(3);
        let r_c: Vec<f64> = (0..n).map(|i| lam[i] * s[i] + ds_a[i] * dl_a[i] - sigma * mu).collect();
        let (dw, ds, dl) = solve(&r_c);
        let step = (STEP_FRACTION * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        axpy(step, &dw, &mut w);
        axpy(step, &ds, &mut s);
        axpy(step, &dl, &mut lam);
    }
    if norm(&w) == 0.0 || z.min_margin(&w) <= 0.0 {
        return Err(Error::Infeasible(format!("no separating direction after {MAX_ITER} iterations")));
    }
    Err(Error::NonConvergence(format!("max-margin duality gap above {tol} after {MAX_ITER} iterations")))
}

/// Active-set solve of the equality-constrained problem on the support.
fn polish(z: &Signed, lam: &[f64], slack: &[f64]) -> Option<(Vec<f64>, Vec<usize>)> {
    let (n, d) = (z.n, z.d);
    let mut s: Vec<usize> = (0..n).filter(|&i| lam[i] > slack[i]).collect();
    s.sort_by(|&a, &b| lam[b].total_cmp(&lam[a]));
    s.truncate(d);
    for _ in 0..MAX_POLISH_STEPS {
        let k = s.len();
        if k == 0 {
            return None;
        }
        let mut q = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..=a {
                let v = dot(z.row(s[a]), z.row(s[b]));
                q[a * k + b] = v;
                q[b * k + a] = v;
            }
        }
        if !cholesky(&mut q, k) {
            // dependent rows (e.g. duplicated samples): shed the weakest
            s.pop();
            continue;
        }
        let mut beta = vec![1.0; k];
        cholesky_solve(&q, k, &mut beta);
        let worst = (0..k).min_by(|&a, &b| beta[a].total_cmp(&beta[b]))?;
        if beta[worst] < 0.0 {
            s.remove(worst);
            continue;
        }
        let mut w = vec![0.0; d];
        for (a, &i) in s.iter().enumerate() {
            axpy(beta[a], z.row(i), &mut w);
        }
        let violated = (0..n)
            .map(|i| (i, dot(&w, z.row(i))))
            .filter(|&(_, m)| m < 1.0 - FEAS_TOL)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match violated {
            Some((i, _)) if !s.contains(&i) && k < d => s.push(i),
            Some(_) => return None,
            None => {
                s.sort_unstable();
                return Some((w, s));
            }
        }
    }
    None
}

/// Largest `n` accepted by [`max_margin_by_enumeration`].
pub const ENUMERATION_MAX_N: usize = 24;

/// Exact hard-margin optimum by brute force, for small instances. The
/// optimum has all its support vectors on the margin, so it is the
/// minimum-norm feasible `w_S = Σ β z` with `Q_SS β = 1` over the subsets
/// `S` of at most `d` samples. Returns the margin `κ = 1/‖w‖`.
pub fn max_margin_by_enumeration(set: &LabeledSet) -> Result<f64> {
    let (n, d) = (set.n, set.d);
    if n == 0 || n > ENUMERATION_MAX_N {
        return Err(Error::Precondition(format!("enumeration needs 1 ≤ n ≤ {ENUMERATION_MAX_N}, got {n}")));
    }
    let z: Vec<Vec<f64>> = (0..n).map(|i| set.row(i).iter().map(|v| v * set.labels[i]).collect()).collect();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > d {
            continue;
        }
        let s: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let q: Vec<Vec<f64>> = s.iter().map(|&a| s.iter().map(|&b| dot(&z[a], &z[b])).collect()).collect();
        let Some(beta) = solve_dense(q, vec![1.0; s.len()]) else { continue };
        let mut w = vec![0.0; d];
        for (k, &i) in s.iter().enumerate() {
            axpy(beta[k], &z[i], &mut w);
        }
        let wn = norm(&w);
        if wn < best && z.iter().all(|zi| dot(&w, zi) >= 1.0 - 1e-9) {
            best = wn;
        }
    }
    if best.is_finite() {
        Ok(1.0 / best)
    } else {
        Err(Error::Infeasible("no subset yields a feasible separator".into()))
    }
}
