//! Replica-theory predictions for a max-margin perceptron trained on a
//! margin-selected subset of expert-labelled Gaussian data.
//!
//! A probe direction at angle γ to the expert scores every example by its
//! margin along the probe. A fraction `f` of the examples is kept (hardest,
//! easiest, or at random) and a max-margin student is trained on the
//! `alpha_syn * d` survivors. The order parameters are the student–expert
//! overlap `R`, the student–probe overlap `rho` and the achieved margin
//! `kappa`; the test error is `arccos(R) / π`.

mod imperfect;
mod perfect;
mod sweep;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::quadrature::integrate_with_breaks;
use crate::math::roots::brent;
use crate::math::special::{h_function, inverse_gaussian_tail, normal_cdf, normal_pdf};
use crate::math::T_CUT;

pub use imperfect::{imperfect_residuals, solve_imperfect, ImperfectIntegrals};
pub use perfect::{perfect_residuals, solve_perfect};
pub use sweep::{sweep, GridCell, SweepRow};

/// Default residual tolerance for the saddle-point solvers.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    KeepHardest,
    KeepEasiest,
    KeepRandom,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::KeepHardest,
        StrategyKind::KeepEasiest,
        StrategyKind::KeepRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::KeepHardest => "keep-hardest",
            StrategyKind::KeepEasiest => "keep-easiest",
            StrategyKind::KeepRandom => "keep-random",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown strategy `{s}`")))
    }
}

/// Which probe score defines hardness.
///
/// `Signed` ranks by `m = probe · (y x)`, so examples the probe mislabels
/// count as hardest. `Absolute` ranks by `|probe · x|`, ignoring the label.
/// The two coincide for a perfect probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginConvention {
    #[default]
    Signed,
    Absolute,
}

impl MarginConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            MarginConvention::Signed => "signed",
            MarginConvention::Absolute => "absolute",
        }
    }
}

/// The kept region of the probe-margin distribution.
///
/// For the signed convention `cutoffs` is an interval of signed margins;
/// for the absolute convention it is an interval of `|z|`. Random
/// selection keeps `(−∞, ∞)` and thins uniformly to `fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    pub cutoffs: (f64, f64),
    pub fraction: f64,
    pub gamma_probe: f64,
    pub convention: MarginConvention,
}

impl SelectionStrategy {
    /// Probability mass of the margin density inside the cutoffs, times the
    /// thinning factor for random selection. Equals `fraction`.
    pub fn kept_mass(&self) -> Result<f64> {
        if self.kind == StrategyKind::KeepRandom {
            return Ok(self.fraction);
        }
        let (lo, hi) = self.cutoffs;
        Ok(match self.convention {
            MarginConvention::Signed => {
                margin_cdf(self.gamma_probe, hi)? - margin_cdf(self.gamma_probe, lo)?
            }
            MarginConvention::Absolute => 2.0 * (h_function(lo.max(0.0)) - h_function(hi)),
        })
    }

    /// Normaliser of the pruned probe-field average: the kept mass for
    /// interval selection, 1 for uniform thinning.
    pub(crate) fn normaliser(&self) -> f64 {
        match self.kind {
            StrategyKind::KeepRandom => 1.0,
            _ => self.fraction,
        }
    }

    /// Kept intervals of the raw probe field `z`, clipped to ±T_CUT.
    pub(crate) fn z_intervals(&self) -> Vec<(f64, f64)> {
        let clip = |a: f64, b: f64| (a.max(-T_CUT), b.min(T_CUT));
        if self.kind == StrategyKind::KeepRandom || self.fraction >= 1.0 {
            return vec![clip(f64::NEG_INFINITY, f64::INFINITY)];
        }
        let (lo, hi) = self.cutoffs;
        match self.convention {
            MarginConvention::Signed => vec![clip(lo, hi)],
            MarginConvention::Absolute => {
                let lo = lo.max(0.0);
                if lo == 0.0 {
                    vec![clip(-hi, hi)]
                } else {
                    vec![clip(f64::NEG_INFINITY, -lo), clip(lo, hi)]
                }
            }
        }
    }

    /// Kept interval of the teacher margin for a perfect probe (always ≥ 0).
    pub(crate) fn perfect_interval(&self) -> (f64, f64) {
        if self.kind == StrategyKind::KeepRandom || self.fraction >= 1.0 {
            return (0.0, f64::INFINITY);
        }
        (self.cutoffs.0.max(0.0), self.cutoffs.1)
    }
}

/// One solved point of the theory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryPoint {
    pub alpha_syn: f64,
    pub f: f64,
    pub gamma_probe: f64,
    pub strategy: SelectionStrategy,
    pub r: f64,
    pub rho: f64,
    pub kappa: f64,
    pub epsilon: f64,
    /// Max-abs residual of the saddle-point equations at the solution.
    pub residual: f64,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub method: String,
    pub iterations: usize,
    /// Newton trial points rejected because they left the physical region
    /// (|R| ≥ 1, |ρ| ≥ 1 or Λ² ≤ 0).
    pub rejected_steps: usize,
    pub path: Vec<Vec<f64>>,
}

/// Test error of a student with expert overlap `r`.
pub fn epsilon_from_overlap(r: f64) -> f64 {
    r.clamp(-1.0, 1.0).acos() / std::f64::consts::PI
}

/// Density of the signed probe margin `m = probe · (y x)` for
/// expert-labelled standard Gaussian inputs and a probe at angle γ.
pub fn margin_density(gamma_probe: f64, m: f64) -> f64 {
    if gamma_probe == 0.0 {
        return if m >= 0.0 { 2.0 * normal_pdf(m) } else { 0.0 };
    }
    let cot = gamma_probe.cos() / gamma_probe.sin();
    2.0 * normal_pdf(m) * normal_cdf(m * cot)
}

/// Cumulative distribution of [`margin_density`].
pub fn margin_cdf(gamma_probe: f64, c: f64) -> Result<f64> {
    if c == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if c == f64::INFINITY {
        return Ok(1.0);
    }
    if gamma_probe == 0.0 {
        return Ok(if c <= 0.0 { 0.0 } else { 1.0 - 2.0 * h_function(c) });
    }
    let upper = c.min(T_CUT);
    if upper <= -T_CUT {
        return Ok(0.0);
    }
    let integrand = |m: f64| [margin_density(gamma_probe, m)];
    let ([mass], _) = integrate_with_breaks(&integrand, -T_CUT, upper, &[0.0], 1e-15)?;
    Ok(mass.min(1.0))
}

/// Builds the cutoff interval whose margin-density mass equals `f`.
pub fn cutoffs_from_fraction(
    f: f64,
    gamma_probe: f64,
    kind: StrategyKind,
    convention: MarginConvention,
) -> Result<SelectionStrategy> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Domain(format!("kept fraction must lie in (0, 1], got {f}")));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&gamma_probe) {
        return Err(Error::Domain(format!(
            "probe angle must lie in [0, π/2], got {gamma_probe}"
        )));
    }
    let all = (f64::NEG_INFINITY, f64::INFINITY);
    let cutoffs = if f == 1.0 || kind == StrategyKind::KeepRandom {
        all
    } else {
        let perfect_like = gamma_probe == 0.0 || convention == MarginConvention::Absolute;
        match (kind, perfect_like) {
            // half-normal quantiles: 1 - 2H(c) = f
            (StrategyKind::KeepHardest, true) => {
                let c = inverse_gaussian_tail(0.5 * (1.0 - f))?;
                match convention {
                    MarginConvention::Absolute => (0.0, c),
                    MarginConvention::Signed => (f64::NEG_INFINITY, c),
                }
            }
            (StrategyKind::KeepEasiest, true) => (inverse_gaussian_tail(0.5 * f)?, f64::INFINITY),
            (StrategyKind::KeepHardest, false) => {
                let c = brent(|c| Ok(margin_cdf(gamma_probe, c)? - f), -T_CUT, T_CUT, 1e-14, 200)?;
                (f64::NEG_INFINITY, c)
            }
            (StrategyKind::KeepEasiest, false) => {
                let c = brent(
                    |c| Ok(margin_cdf(gamma_probe, c)? - (1.0 - f)),
                    -T_CUT,
                    T_CUT,
                    1e-14,
                    200,
                )?;
                (c, f64::INFINITY)
            }
            (StrategyKind::KeepRandom, _) => all,
        }
    };
    Ok(SelectionStrategy {
        kind,
        cutoffs,
        fraction: f,
        gamma_probe,
        convention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn density_special_cases() {
        assert_eq!(margin_density(0.0, -0.3), 0.0);
        for m in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            assert!((margin_density(FRAC_PI_2, m) - normal_pdf(m)).abs() < 1e-15);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        for g in [PI / 6.0, PI / 18.0, 0.01, FRAC_PI_2] {
            let total = margin_cdf(g, f64::INFINITY).unwrap();
            assert_eq!(total, 1.0);
            let numeric = margin_cdf(g, T_CUT).unwrap();
            assert!((numeric - 1.0).abs() < 1e-9, "gamma {g}: {numeric}");
        }
    }

    #[test]
    fn density_matches_monte_carlo_histogram() {
        // Oracle: sample (u, z) with correlation cos γ, label by u, histogram y*z.
        let g = PI / 6.0;
        let (c, s) = (g.cos(), g.sin());
        let mut r = rng::stream(11, &[42]);
        let n = 1_000_000;
        let (lo, width, bins) = (-3.0, 0.25, 28);
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let a: f64 = r.sample(StandardNormal);
            let b: f64 = r.sample(StandardNormal);
            let u = a;
            let z = c * a + s * b;
            let m = if u > 0.0 { z } else { -z };
            let k = ((m - lo) / width).floor();
            if k >= 0.0 && (k as usize) < bins {
                counts[k as usize] += 1;
            }
        }
        for (k, &cnt) in counts.iter().enumerate() {
            let a = lo + k as f64 * width;
            let empirical = cnt as f64 / (n as f64 * width);
            let mass = margin_cdf(g, a + width).unwrap() - margin_cdf(g, a).unwrap();
            assert!((empirical - mass / width).abs() < 0.01, "bin {k}");
        }
    }

    #[test]
    fn cutoffs_match_half_normal_quantiles() {
        let s = cutoffs_from_fraction(0.5, 0.0, StrategyKind::KeepHardest, MarginConvention::Signed).unwrap();
        assert_eq!(s.cutoffs.0, f64::NEG_INFINITY);
        assert!((s.cutoffs.1 - 0.674_489_750_196_081_7).abs() < 1e-10);
        let s = cutoffs_from_fraction(0.5, 0.0, StrategyKind::KeepEasiest, MarginConvention::Signed).unwrap();
        assert!((s.cutoffs.0 - 0.674_489_750_196_081_7).abs() < 1e-10);
        assert_eq!(s.cutoffs.1, f64::INFINITY);
        for kind in StrategyKind::ALL {
            let s = cutoffs_from_fraction(1.0, 0.3, kind, MarginConvention::Signed).unwrap();
            assert_eq!(s.cutoffs, (f64::NEG_INFINITY, f64::INFINITY));
        }
    }

    #[test]
    fn kept_mass_equals_fraction() {
        for conv in [MarginConvention::Signed, MarginConvention::Absolute] {
            for g in [0.0, 10f64.to_radians(), 20f64.to_radians(), 1.2] {
                for f in [0.1, 0.3, 0.6, 0.95] {
                    for kind in StrategyKind::ALL {
                        let s = cutoffs_from_fraction(f, g, kind, conv).unwrap();
                        let m = s.kept_mass().unwrap();
                        assert!((m - f).abs() < 1e-10, "{kind} {conv:?} g={g} f={f}: {m}");
                    }
                }
            }
        }
    }

    #[test]
    fn cutoff_domain_errors() {
        for f in [0.0, -0.2, 1.01] {
            assert!(matches!(
                cutoffs_from_fraction(f, 0.0, StrategyKind::KeepHardest, MarginConvention::Signed),
                Err(Error::Domain(_))
            ));
        }
    }

    #[test]
    fn epsilon_is_arccos_over_pi() {
        assert_eq!(epsilon_from_overlap(1.0), 0.0);
        assert_eq!(epsilon_from_overlap(0.0), 0.5);
        assert!((epsilon_from_overlap(3f64.sqrt() / 2.0) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("hardest".parse::<StrategyKind>().is_err());
    }
}
