//! Root finding: bracketed scalar roots and a damped Newton method for
//! small nonlinear systems with a central-difference Jacobian.

use crate::error::{Error, Result};

/// Brent's method on a sign-changing bracket `[a, b]`.
pub fn brent<F>(mut f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracketing(format!(
            "no sign change on [{a}, {b}]: f(a) = {fa}, f(b) = {fb}"
        )));
    }
    let (mut c, mut fc) = (b, fb);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
    }
    Err(Error::NonConvergence(format!(
        "brent exceeded {max_iter} iterations near x = {b}"
    )))
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Convergence threshold on the max-abs residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Central-difference step for the Jacobian.
    pub fd_step: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            fd_step: 1e-6,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    pub max_residual: f64,
    pub iterations: usize,
    /// Trial points rejected by the admissibility predicate.
    pub rejected_steps: usize,
    pub path: Vec<Vec<f64>>,
    pub converged: bool,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-300 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Damped Newton iteration. Trial points failing `admissible` (or whose
/// residual cannot be evaluated) are rejected and the step is halved.
///
/// Returns a report even when the iteration stalls; check `converged`.
pub fn damped_newton<F, A>(
    residual: F,
    admissible: A,
    x0: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    A: Fn(&[f64]) -> bool,
{
    if !admissible(x0) {
        return Err(Error::Bracketing(format!(
            "initial point {x0:?} lies outside the admissible region"
        )));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residual(&x)?;
    let mut path = vec![x.clone()];
    let mut rejected = 0;
    let mut iterations = 0;
    while iterations < opts.max_iter && max_abs(&r) > opts.tol {
        iterations += 1;
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let h = opts.fd_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let (rp, rm, span) = match (admissible(&xp), admissible(&xm)) {
                (true, true) => (residual(&xp)?, residual(&xm)?, 2.0 * h),
                (true, false) => (residual(&xp)?, r.clone(), h),
                (false, true) => (r.clone(), residual(&xm)?, h),
                (false, false) => {
                    return Ok(stalled(x, r, iterations, rejected, path));
                }
            };
            for i in 0..n {
                jac[i][j] = (rp[i] - rm[i]) / span;
            }
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let Some(dx) = solve_dense(jac, rhs) else {
            return Ok(stalled(x, r, iterations, rejected, path));
        };
        let base = norm2(&r);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
            if !admissible(&trial) {
                rejected += 1;
                step *= 0.5;
                continue;
            }
            match residual(&trial) {
                Ok(rt) if norm2(&rt) < (1.0 - 1e-4 * step) * base => {
                    accepted = Some((trial, rt));
                    break;
                }
                Ok(_) => step *= 0.5,
                Err(_) => {
                    rejected += 1;
                    step *= 0.5;
                }
            }
        }
        match accepted {
            Some((xn, rn)) => {
                x = xn;
                r = rn;
                path.push(x.clone());
            }
            None => return Ok(stalled(x, r, iterations, rejected, path)),
        }
    }
    let max_residual = max_abs(&r);
    Ok(NewtonReport {
        converged: max_residual <= opts.tol,
        x,
        residual: r,
        max_residual,
        iterations,
        rejected_steps: rejected,
        path,
    })
}

fn stalled(
    x: Vec<f64>,
    r: Vec<f64>,
    iterations: usize,
    rejected_steps: usize,
    path: Vec<Vec<f64>>,
) -> NewtonReport {
    let max_residual = max_abs(&r);
    NewtonReport {
        converged: false,
        x,
        residual: r,
        max_residual,
        iterations,
        rejected_steps,
        path,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| Ok(x * x * x - 2.0 * x - 5.0), 2.0, 3.0, 1e-14, 100).unwrap();
        assert!((r - 2.094_551_481_542_326_5).abs() < 1e-12);
    }

    #[test]
    fn brent_rejects_bad_bracket() {
        assert!(matches!(
            brent(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-12, 50),
            Err(Error::Bracketing(_))
        ));
    }

    #[test]
    fn newton_solves_circle_line_intersection() {
        let res = |v: &[f64]| Ok(vec![v[0] * v[0] + v[1] * v[1] - 1.0, v[0] - v[1]]);
        let rep = damped_newton(res, |_| true, &[0.9, 0.2], &NewtonOptions::default()).unwrap();
        assert!(rep.converged);
        let s = 0.5f64.sqrt();
        assert!((rep.x[0] - s).abs() < 1e-9 && (rep.x[1] - s).abs() < 1e-9);
        assert!(rep.path.len() >= 2);
    }

    #[test]
    fn newton_respects_admissible_region() {
        // roots at ±1; the predicate forbids x < 0
        let res = |v: &[f64]| Ok(vec![v[0] * v[0] - 1.0]);
        let rep = damped_newton(res, |v| v[0] > 0.0, &[0.05], &NewtonOptions::default()).unwrap();
        assert!(rep.converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-9);
        assert!(damped_newton(res, |v| v[0] > 0.0, &[-0.5], &NewtonOptions::default()).is_err());
    }

    #[test]
    fn dense_solver_handles_pivoting() {
        let a = vec![vec![0.0, 2.0], vec![3.0, 1.0]];
        let x = solve_dense(a, vec![4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(solve_dense(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 2.0]).is_none());
    }
}
