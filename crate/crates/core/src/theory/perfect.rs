//! Perfect probe (γ = 0): two saddle-point equations in (R, κ).
//!
//! With the probe equal to the expert, the kept examples have teacher
//! margin in an interval `[a, b] ⊂ [0, ∞)`. Writing `s = √(1 − R²)` and
//! averaging over the kept fraction `f`:
//!
//! ```text
//! R      = (2α/f) ∫_{−∞}^{κ} Dt (κ − t) [e^{−(a−Rt)²/2s²} − e^{−(b−Rt)²/2s²}] / (s√(2π))
//! 1 − R² = (2α/f) ∫_{−∞}^{κ} Dt (κ − t)² [H((a − Rt)/s) − H((b − Rt)/s)]
//! ```
//!
//! Keep-hardest (`a = 0`, `b` = cutoff) is the classical data-pruning
//! system; keep-easiest and random selection use the same form with their
//! own interval.

use super::{epsilon_from_overlap, SelectionStrategy, SolveDiagnostics, TheoryPoint};
use crate::error::{Error, Result};
use crate::math::quadrature::integrate_with_breaks;
use crate::math::roots::{brent, damped_newton, NewtonOptions};
use crate::math::special::{h_function, normal_pdf, INV_SQRT_2PI};
use crate::math::T_CUT;

const KAPPA_BOUND: f64 = 10.0;
const QUAD_TOL: f64 = 1e-13;

fn integrals(r: f64, kappa: f64, a: f64, b: f64) -> Result<[f64; 2]> {
    let s2 = 1.0 - r * r;
    let s = s2.sqrt();
    let upper = kappa.min(T_CUT);
    if upper <= -T_CUT {
        return Ok([0.0, 0.0]);
    }
    let gauss_gap = |edge: f64, t: f64| {
        if edge.is_infinite() {
            0.0
        } else {
            let d = edge - r * t;
            (-d * d / (2.0 * s2)).exp()
        }
    };
    let tail = |edge: f64, t: f64| {
        if edge.is_infinite() {
            0.0
        } else {
            h_function((edge - r * t) / s)
        }
    };
    let integrand = |t: f64| {
        let w = normal_pdf(t) * (kappa - t);
        let first = (gauss_gap(a, t) - gauss_gap(b, t)) * INV_SQRT_2PI / s;
        let second = tail(a, t) - tail(b, t);
        [w * first, w * (kappa - t) * second]
    };
    let mut breaks = vec![0.0];
    if r.abs() > 1e-12 {
        for edge in [a, b] {
            if edge.is_finite() {
                let t0 = edge / r;
                let w = s / r.abs();
                breaks.extend([t0 - 4.0 * w, t0 - w, t0, t0 + w, t0 + 4.0 * w]);
            }
        }
    }
    let (v, _) = integrate_with_breaks(&integrand, -T_CUT, upper, &breaks, QUAD_TOL)?;
    Ok(v)
}

/// Residuals `[eq_R, eq_κ]` of the perfect-probe system at `(r, kappa)`.
pub fn perfect_residuals(alpha_syn: f64, strategy: &SelectionStrategy, r: f64, kappa: f64) -> Result<[f64; 2]> {
    if !(r.abs() < 1.0) {
        return Err(Error::Bracketing(format!("overlap R = {r} escaped (−1, 1)")));
    }
    let (a, b) = strategy.perfect_interval();
    let pref = 2.0 * alpha_syn / strategy.normaliser();
    let [i1, i2] = integrals(r, kappa, a, b)?;
    Ok([r - pref * i1, 1.0 - r * r - pref * i2])
}

fn admissible(x: &[f64]) -> bool {
    x[0] > 0.0 && x[0] < 1.0 - 1e-13 && x[1].abs() < KAPPA_BOUND
}

/// Solves the perfect-probe system. `warm` is an optional `(R, κ)` start.
pub fn solve_perfect(
    alpha_syn: f64,
    strategy: &SelectionStrategy,
    tol: f64,
    warm: Option<(f64, f64)>,
) -> Result<TheoryPoint> {
    if !(alpha_syn > 0.0 && alpha_syn.is_finite()) {
        return Err(Error::Domain(format!("alpha_syn must be positive, got {alpha_syn}")));
    }
    if strategy.gamma_probe != 0.0 {
        return Err(Error::Precondition(
            "perfect-probe solver needs a strategy built for gamma_probe = 0".into(),
        ));
    }
    let residual = |x: &[f64]| perfect_residuals(alpha_syn, strategy, x[0], x[1]).map(|r| r.to_vec());
    let opts = NewtonOptions { tol, ..NewtonOptions::default() };
    let x0 = warm.map(|(r, k)| [r, k]).unwrap_or([0.5, 0.5]);

    let mut attempt = damped_newton(residual, admissible, &x0, &opts)?;
    let mut method = "newton";
    if !attempt.converged || attempt.x[0] < 0.0 {
        log::debug!(
            "newton stalled at {:?} (residual {:.3e}); falling back to nested bisection",
            attempt.x,
            attempt.max_residual
        );
        let (r, kappa) = nested_solve(alpha_syn, strategy)?;
        // polish from the bracketed root
        let polish = damped_newton(residual, admissible, &[r, kappa], &opts)?;
        method = "nested-bisection";
        let mut path = attempt.path;
        path.extend(polish.path.iter().cloned());
        attempt = polish;
        attempt.path = path;
    }
    if !attempt.converged {
        return Err(Error::Solver {
            message: format!("perfect-probe system did not converge (alpha_syn = {alpha_syn})"),
            residuals: attempt.residual,
            path: attempt.path,
        });
    }
    let (r, kappa) = (attempt.x[0], attempt.x[1]);
    if r < 0.0 {
        return Err(Error::Solver {
            message: format!("unphysical solution with R = {r} < 0"),
            residuals: attempt.residual,
            path: attempt.path,
        });
    }
    Ok(TheoryPoint {
        alpha_syn,
        f: strategy.fraction,
        gamma_probe: 0.0,
        strategy: *strategy,
        r,
        rho: r,
        kappa,
        epsilon: epsilon_from_overlap(r),
        residual: attempt.max_residual,
        diagnostics: SolveDiagnostics {
            method: method.into(),
            iterations: attempt.iterations,
            rejected_steps: attempt.rejected_steps,
            path: attempt.path,
        },
    })
}

/// κ(R) from the second equation, which is decreasing in κ.
fn kappa_for(alpha_syn: f64, strategy: &SelectionStrategy, r: f64) -> Result<f64> {
    let g = |k: f64| perfect_residuals(alpha_syn, strategy, r, k).map(|v| v[1]);
    let lo = -KAPPA_BOUND + 1.0;
    let mut hi = 1.0;
    while g(hi)? > 0.0 {
        hi += 1.0;
        if hi >= KAPPA_BOUND {
            return Err(Error::Bracketing(format!("no κ bracket for R = {r}")));
        }
    }
    brent(g, lo, hi, 1e-14, 200)
}

/// Fallback: κ eliminated by bracketing, then a bracketed root in R.
fn nested_solve(alpha_syn: f64, strategy: &SelectionStrategy) -> Result<(f64, f64)> {
    let outer = |r: f64| -> Result<f64> {
        let k = kappa_for(alpha_syn, strategy, r)?;
        perfect_residuals(alpha_syn, strategy, r, k).map(|v| v[0])
    };
    // scan densely near R = 1, where large-alpha solutions live
    let mut grid: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
    grid.extend((2..=10).map(|p| 1.0 - 10f64.powi(-p) * 5.0));
    let mut prev: Option<(f64, f64)> = None;
    for &r in &grid {
        let v = outer(r)?;
        if let Some((rp, vp)) = prev {
            if vp.signum() != v.signum() {
                let root = brent(outer, rp, r, 1e-15, 200)?;
                return Ok((root, kappa_for(alpha_syn, strategy, root)?));
            }
        }
        prev = Some((r, v));
    }
    Err(Error::Bracketing(format!(
        "no sign change of the R equation on (0, 1) for alpha_syn = {alpha_syn}"
    )))
}
