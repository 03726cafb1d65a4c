//! Imperfect probe (0 < γ ≤ π/2): three saddle-point equations in (R, ρ, κ).
//!
//! With `c = cos γ`, `Λ² = sin²γ − R² − ρ² + 2ρRc`,
//! `Γ(t, z) = z(ρR − c) − t(R − ρc)` and the Gaussian kernel
//! `N(t | z) = exp(−(t − ρz)² / 2(1 − ρ²)) / √(2π(1 − ρ²))`, define the
//! probe-field averages (φ(z)/mass over the kept region `K`)
//!
//! ```text
//! J1 = ⟨∫^κ dt e^{−Δ/2Λ²} (κ − t)⟩
//! J2 = ⟨∫^κ dt N H(Γ/√(1−ρ²)Λ) (κ − t)²⟩
//! J3 = ⟨∫^κ dt N H(Γ/√(1−ρ²)Λ) (z − ρt)/(1 − ρ²) (κ − t)⟩
//! ```
//!
//! The system is
//!
//! ```text
//! (R − ρc)/sin²γ                  = α J1 / (πΛ)
//! 1 − (ρ² + R² − 2ρRc)/sin²γ       = 2α J2
//! (ρ − Rc)/sin²γ                  = 2α J3 + α (ρR − c) J1 / (πΛ(1 − ρ²))
//! ```
//!
//! The right-hand sides of the first and third lines are `−α ∂J2/∂R` and
//! `−α ∂J2/∂ρ`; the unit tests check this by finite differences.
//!
//! `Δ/Λ²` is evaluated as `(t − ρz)²/(1 − ρ²) + Γ²/((1 − ρ²)Λ²)`, which is
//! algebraically identical and avoids cancellation when Λ is small.

use super::{
    cutoffs_from_fraction, epsilon_from_overlap, solve_perfect, SelectionStrategy, SolveDiagnostics, TheoryPoint,
};
use crate::error::{Error, Result};
use crate::math::quadrature::integrate_with_breaks;
use crate::math::roots::{brent, damped_newton, NewtonOptions, NewtonReport};
use crate::math::special::{h_function, normal_pdf, INV_SQRT_2PI};
use crate::math::T_CUT;

use std::f64::consts::PI;

const KAPPA_BOUND: f64 = 10.0;
const INNER_TOL: f64 = 1e-13;
const OUTER_TOL: f64 = 1e-12;
/// Smallest Λ² accepted during iteration.
const LAMBDA2_FLOOR: f64 = 1e-14;

/// The three probe-averaged integrals at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImperfectIntegrals {
    pub lambda: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
}

pub(crate) fn lambda_sq(gamma: f64, r: f64, rho: f64) -> f64 {
    let s = gamma.sin();
    s * s - r * r - rho * rho + 2.0 * rho * r * gamma.cos()
}

impl ImperfectIntegrals {
    pub fn compute(strategy: &SelectionStrategy, r: f64, rho: f64, kappa: f64) -> Result<Self> {
        let gamma = strategy.gamma_probe;
        let c = gamma.cos();
        let l2 = lambda_sq(gamma, r, rho);
        if !(r.abs() < 1.0 && rho.abs() < 1.0) {
            return Err(Error::Bracketing(format!("overlaps (R, ρ) = ({r}, {rho}) left (−1, 1)")));
        }
        if !(l2 > 0.0) {
            return Err(Error::Domain(format!("Λ² = {l2} is not positive at R = {r}, ρ = {rho}")));
        }
        let lambda = l2.sqrt();
        let q = 1.0 - rho * rho;
        let sq = q.sqrt();
        let a_rt = r - rho * c; // coefficient of t in −Γ
        let b_z = rho * r - c; // coefficient of z in Γ
        let h_scale = 1.0 / (sq * lambda);
        let mass = strategy.normaliser();

        let inner = |z: f64| -> [f64; 3] {
            let lo = rho * z - T_CUT * sq;
            let hi = kappa;
            if hi <= lo {
                return [0.0; 3];
            }
            let f = |t: f64| {
                let u = t - rho * z;
                let gauss = (-0.5 * u * u / q).exp();
                let gam = z * b_z - t * a_rt;
                let arg = gam * h_scale;
                let n = gauss * INV_SQRT_2PI / sq;
                let hk = n * h_function(arg);
                let k = kappa - t;
                [
                    gauss * (-0.5 * arg * arg).exp() * k,
                    hk * k * k,
                    hk * (z - rho * t) / q * k,
                ]
            };
            let mut breaks = vec![rho * z - sq, rho * z, rho * z + sq];
            if a_rt.abs() > 1e-300 {
                let t_star = z * b_z / a_rt;
                let w = sq * lambda / a_rt.abs();
                for m in [-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0] {
                    breaks.push(t_star + m * w);
                }
            }
            match integrate_with_breaks(&f, lo, hi, &breaks, INNER_TOL) {
                Ok((v, _)) => {
                    let w = normal_pdf(z) / mass;
                    [w * v[0], w * v[1], w * v[2]]
                }
                Err(_) => [f64::NAN; 3],
            }
        };

        let mut total = [0.0; 3];
        for (z0, z1) in strategy.z_intervals() {
            let mut breaks = vec![0.0, -1.0, 1.0];
            // where the H transition crosses the upper t limit
            if b_z.abs() > 1e-300 {
                let z_star = kappa * a_rt / b_z;
                let w = sq * lambda / b_z.abs();
                for m in [-3.0, -1.0, 0.0, 1.0, 3.0] {
                    breaks.push(z_star + m * w);
                }
            }
            if rho.abs() > 1e-300 {
                breaks.push(kappa / rho);
            }
            let (v, _) = integrate_with_breaks(&inner, z0, z1, &breaks, OUTER_TOL)?;
            for k in 0..3 {
                total[k] += v[k];
            }
        }
        Ok(Self {
            lambda,
            j1: total[0],
            j2: total[1],
            j3: total[2],
        })
    }
}

/// Residuals `[eq_R, eq_κ, eq_ρ]` of the imperfect-probe system.
pub fn imperfect_residuals(
    alpha_syn: f64,
    strategy: &SelectionStrategy,
    r: f64,
    rho: f64,
    kappa: f64,
) -> Result<[f64; 3]> {
    let gamma = strategy.gamma_probe;
    let c = gamma.cos();
    let s2 = gamma.sin().powi(2);
    let j = ImperfectIntegrals::compute(strategy, r, rho, kappa)?;
    let pl = alpha_syn / (PI * j.lambda);
    Ok([
        (r - rho * c) / s2 - pl * j.j1,
        1.0 - (rho * rho + r * r - 2.0 * rho * r * c) / s2 - 2.0 * alpha_syn * j.j2,
        (rho - r * c) / s2
            - (2.0 * alpha_syn * j.j3 + pl * (rho * r - c) / (1.0 - rho * rho) * j.j1),
    ])
}

fn admissible(gamma: f64) -> impl Fn(&[f64]) -> bool {
    move |x: &[f64]| {
        x[0] > 0.0
            && x[0] < 1.0 - 1e-13
            && x[1].abs() < 1.0 - 1e-13
            && x[2].abs() < KAPPA_BOUND
            && lambda_sq(gamma, x[0], x[1]) > LAMBDA2_FLOOR
    }
}

/// Default start: (R, ρ, κ) = (0.5, 0.5 cos γ, 0.5).
pub(crate) fn default_start(gamma: f64) -> [f64; 3] {
    [0.5, 0.5 * gamma.cos(), 0.5]
}

/// Solves the imperfect-probe system. `warm` is an optional `(R, ρ, κ)`
/// start, typically the solution at a neighbouring grid cell.
pub fn solve_imperfect(
    alpha_syn: f64,
    strategy: &SelectionStrategy,
    tol: f64,
    warm: Option<[f64; 3]>,
) -> Result<TheoryPoint> {
    let gamma = strategy.gamma_probe;
    if !(alpha_syn > 0.0 && alpha_syn.is_finite()) {
        return Err(Error::Domain(format!("alpha_syn must be positive, got {alpha_syn}")));
    }
    if !(gamma > 0.0 && gamma <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "imperfect-probe solver needs 0 < γ ≤ π/2, got {gamma}"
        )));
    }
    let opts = NewtonOptions { tol, ..NewtonOptions::default() };
    // cold starts outside the basin wander; fail them early and move on
    let probe_opts = NewtonOptions { max_iter: 12, max_backtracks: 12, ..opts };
    let mut starts = Vec::new();
    if let Some(w) = warm {
        starts.push(w);
    }
    // the perfect-probe solution tilted by γ is usually close
    if let Ok(p0) = cutoffs_from_fraction(strategy.fraction, 0.0, strategy.kind, strategy.convention)
        .and_then(|s0| solve_perfect(alpha_syn, &s0, tol, None))
    {
        starts.push([p0.r, p0.r * gamma.cos(), p0.kappa]);
    }
    starts.push(default_start(gamma));

    let mut rejected = 0;
    let mut trail: Vec<Vec<f64>> = Vec::new();
    let mut last: Option<NewtonReport> = None;
    for x0 in &starts {
        if !admissible(gamma)(x0) {
            continue;
        }
        let rep = newton3(alpha_syn, strategy, x0, &probe_opts)?;
        rejected += rep.rejected_steps;
        trail.extend(rep.path.iter().cloned());
        if rep.converged && rep.x[0] >= 0.0 {
            return Ok(point(alpha_syn, strategy, rep, "newton", rejected, trail));
        }
        last = Some(rep);
    }

    log::debug!("3-d newton stalled for alpha_syn = {alpha_syn}, gamma = {gamma}; continuing in alpha_syn");
    match continuation(alpha_syn, strategy, &opts) {
        Ok(rep) => {
            rejected += rep.rejected_steps;
            trail.extend(rep.path.iter().cloned());
            if rep.converged && rep.x[0] >= 0.0 {
                return Ok(point(alpha_syn, strategy, rep, "alpha-continuation", rejected, trail));
            }
            last = Some(rep);
        }
        Err(e) => log::debug!("continuation failed: {e}"),
    }

    log::debug!("eliminating kappa");
    let x0 = warm.unwrap_or(default_start(gamma));
    if let Ok(rep) = reduced_newton(alpha_syn, strategy, [x0[0], x0[1]], &opts) {
        rejected += rep.rejected_steps;
        trail.extend(rep.path.iter().cloned());
        if rep.converged && rep.x[0] >= 0.0 {
            return Ok(point(alpha_syn, strategy, rep, "kappa-elimination", rejected, trail));
        }
        last = Some(rep);
    }

    let Some(rep) = last else {
        return Err(Error::NonConvergence(format!(
            "no admissible start for alpha_syn = {alpha_syn}, gamma = {gamma}"
        )));
    };
    let message = if rep.converged {
        format!("unphysical solution with R = {} < 0", rep.x[0])
    } else {
        format!(
            "imperfect-probe system did not converge (alpha_syn = {alpha_syn}, gamma = {gamma}, {rejected} rejected steps)"
        )
    };
    Err(Error::Solver {
        message,
        residuals: rep.residual,
        path: trail,
    })
}

/// Walks `alpha_syn` up geometrically from `alpha_syn / 8`, shrinking the
/// ratio whenever a step fails to converge.
fn continuation(alpha_syn: f64, strategy: &SelectionStrategy, opts: &NewtonOptions) -> Result<NewtonReport> {
    let gamma = strategy.gamma_probe;
    // a warm-started step either converges in a handful of iterations or
    // the step is too long
    let step_opts = NewtonOptions { max_iter: 10, max_backtracks: 12, ..*opts };
    let mut a = alpha_syn / 8.0;
    let first = newton3(a, strategy, &default_start(gamma), opts)?;
    if !first.converged {
        return Ok(first);
    }
    let mut rejected = first.rejected_steps;
    let mut path = first.path.clone();
    let mut x = [first.x[0], first.x[1], first.x[2]];
    let mut prev: Option<(f64, [f64; 3])> = None;
    let mut ratio = 2.0f64;
    let mut rep = first;
    while a < alpha_syn {
        let next = (a * ratio).min(alpha_syn);
        // secant predictor in log(alpha)
        let mut guess = x;
        if let Some((ap, xp)) = prev {
            let t = (next / a).ln() / (a / ap).ln();
            let pred: Vec<f64> = (0..3).map(|i| x[i] + t * (x[i] - xp[i])).collect();
            if admissible(gamma)(&pred) {
                guess = [pred[0], pred[1], pred[2]];
            }
        }
        let trial = newton3(next, strategy, &guess, &step_opts)?;
        rejected += trial.rejected_steps;
        if trial.converged {
            prev = Some((a, x));
            a = next;
            x = [trial.x[0], trial.x[1], trial.x[2]];
            path.push(trial.x.clone());
            rep = trial;
            ratio = (ratio * ratio).min(2.0);
        } else {
            ratio = ratio.sqrt();
            if ratio < 1.01 {
                rep = trial;
                break;
            }
        }
    }
    rep.rejected_steps = rejected;
    rep.path = path;
    Ok(rep)
}

fn newton3(alpha_syn: f64, strategy: &SelectionStrategy, x0: &[f64; 3], opts: &NewtonOptions) -> Result<NewtonReport> {
    let residual =
        |x: &[f64]| imperfect_residuals(alpha_syn, strategy, x[0], x[1], x[2]).map(|r| r.to_vec());
    damped_newton(residual, admissible(strategy.gamma_probe), x0, opts)
}

/// κ solving the second equation at fixed (R, ρ); that residual decreases in κ.
fn kappa_for(alpha_syn: f64, strategy: &SelectionStrategy, r: f64, rho: f64) -> Result<f64> {
    let g = |k: f64| imperfect_residuals(alpha_syn, strategy, r, rho, k).map(|v| v[1]);
    let mut hi = 1.0;
    while g(hi)? > 0.0 {
        hi += 1.0;
        if hi >= KAPPA_BOUND {
            return Err(Error::Bracketing(format!("no κ bracket at R = {r}, ρ = {rho}")));
        }
    }
    let mut lo = hi - 1.0;
    while g(lo)? < 0.0 {
        lo -= 1.0;
        if lo <= -KAPPA_BOUND {
            return Err(Error::Bracketing(format!("no κ bracket at R = {r}, ρ = {rho}")));
        }
    }
    brent(g, lo, hi, 1e-14, 200)
}

/// Newton in (R, ρ) with κ eliminated, polished by a full 3-d step.
fn reduced_newton(
    alpha_syn: f64,
    strategy: &SelectionStrategy,
    x0: [f64; 2],
    opts: &NewtonOptions,
) -> Result<NewtonReport> {
    let gamma = strategy.gamma_probe;
    let residual = |x: &[f64]| -> Result<Vec<f64>> {
        let k = kappa_for(alpha_syn, strategy, x[0], x[1])?;
        let r = imperfect_residuals(alpha_syn, strategy, x[0], x[1], k)?;
        Ok(vec![r[0], r[2]])
    };
    let adm = |x: &[f64]| admissible(gamma)(&[x[0], x[1], 0.0]);
    let loose = NewtonOptions { tol: opts.tol * 0.1, ..*opts };
    let rep = damped_newton(residual, adm, &x0, &loose)?;
    let k = kappa_for(alpha_syn, strategy, rep.x[0], rep.x[1])?;
    let mut full = newton3(alpha_syn, strategy, &[rep.x[0], rep.x[1], k], opts)?;
    full.rejected_steps += rep.rejected_steps;
    let mut path = rep.path;
    path.extend(full.path);
    full.path = path;
    Ok(full)
}

fn point(
    alpha_syn: f64,
    strategy: &SelectionStrategy,
    rep: NewtonReport,
    method: &str,
    rejected: usize,
    path: Vec<Vec<f64>>,
) -> TheoryPoint {
    TheoryPoint {
        alpha_syn,
        f: strategy.fraction,
        gamma_probe: strategy.gamma_probe,
        strategy: *strategy,
        r: rep.x[0],
        rho: rep.x[1],
        kappa: rep.x[2],
        epsilon: epsilon_from_overlap(rep.x[0]),
        residual: rep.max_residual,
        diagnostics: SolveDiagnostics {
            method: method.into(),
            iterations: rep.iterations,
            rejected_steps: rejected,
            path,
        },
    }
}
