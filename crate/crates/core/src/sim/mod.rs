//! Monte Carlo teacher-student experiment: Gaussian data labelled by a
//! random expert, a probe at a fixed angle (or a briefly trained
//! perceptron) scores margins, a fraction of the data is kept, and a
//! max-margin student is trained on it.

mod data;
mod maxmargin;

pub use data::{
    angle_between, compute_margins, generate_set, make_probe, sample_expert, select_indices, select_subset,
    train_probe, ExpertModel, LabeledSet, MarginProfile,
};
pub use maxmargin::{max_margin_by_enumeration, train_max_margin, MaxMarginFit, ENUMERATION_MAX_N};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::math::linalg::{cosine, dot};
use crate::rng::{derive_seed, tag};
use crate::theory::{epsilon_from_overlap, MarginConvention, StrategyKind};

pub const HOLDOUT_PER_DIM: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    ConditionedGaussian,
    TrainedEpochs(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub d: usize,
    pub alpha_tot: f64,
    pub f: f64,
    /// Radians. Ignored for trained probes.
    pub gamma_probe: f64,
    pub probe_mode: ProbeMode,
    pub kind: StrategyKind,
    #[serde(default)]
    pub convention: MarginConvention,
    pub trials: usize,
    pub master_seed: u64,
    /// Also measure the error on `20 d` fresh samples.
    #[serde(default = "default_true")]
    pub holdout: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_true() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-8
}

impl SimConfig {
    /// Config whose kept set has `alpha_syn · d` samples on average.
    pub fn for_alpha_syn(d: usize, alpha_syn: f64, f: f64, gamma_probe: f64, kind: StrategyKind) -> Self {
        Self {
            d,
            alpha_tot: alpha_syn / f,
            f,
            gamma_probe,
            probe_mode: ProbeMode::ConditionedGaussian,
            kind,
            convention: MarginConvention::Signed,
            trials: 100,
            master_seed: 0,
            holdout: true,
            tol: default_tol(),
        }
    }

    pub fn alpha_syn(&self) -> f64 {
        self.f * self.alpha_tot
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Precondition(format!("d must be at least 2, got {}", self.d)));
        }
        if self.trials < 1 {
            return Err(Error::Precondition("at least one trial is required".into()));
        }
        if !(self.alpha_tot > 0.0 && self.alpha_tot.is_finite()) {
            return Err(Error::Domain(format!("alpha_tot must be positive, got {}", self.alpha_tot)));
        }
        if !(self.f > 0.0 && self.f <= 1.0) {
            return Err(Error::Domain(format!("kept fraction must lie in (0, 1], got {}", self.f)));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.gamma_probe) {
            return Err(Error::Domain(format!("gamma_probe must lie in [0, π/2], got {}", self.gamma_probe)));
        }
        if self.probe_mode == ProbeMode::TrainedEpochs(0) {
            return Err(Error::Precondition("probe training needs at least one epoch".into()));
        }
        Ok(())
    }

    pub fn n_total(&self) -> usize {
        (self.alpha_tot * self.d as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub n_kept: usize,
    pub r: f64,
    pub kappa: f64,
    pub epsilon_analytic: f64,
    pub epsilon_empirical: Option<f64>,
    /// Achieved probe-expert angle, radians.
    pub gamma_achieved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean_epsilon: f64,
    /// `None` for a single trial.
    pub std_error: Option<f64>,
    pub mean_epsilon_empirical: Option<f64>,
    pub std_error_empirical: Option<f64>,
    pub per_trial: Vec<TrialRecord>,
    pub config: SimConfig,
}

/// Overlap with the expert, `arccos(R)/π`, and the holdout error rate.
pub fn measure_error(
    student: &[f64],
    expert: &ExpertModel,
    holdout: Option<&LabeledSet>,
) -> Result<(f64, f64, Option<f64>)> {
    if student.len() != expert.d {
        return Err(Error::DimensionMismatch { expected: expert.d, got: student.len() });
    }
    let r = cosine(student, &expert.weights)
        .ok_or_else(|| Error::Domain("student or expert has zero norm".into()))?;
    let empirical = match holdout {
        None => None,
        Some(h) => {
            if h.d != expert.d {
                return Err(Error::DimensionMismatch { expected: expert.d, got: h.d });
            }
            let wrong = (0..h.n).filter(|&i| h.labels[i] * dot(student, h.row(i)) <= 0.0).count();
            Some(wrong as f64 / h.n as f64)
        }
    };
    Ok((r, epsilon_from_overlap(r), empirical))
}

/// Mean and standard error (sample std over √n); the latter is `None` for
/// fewer than two values.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    derive_seed(master_seed, &[tag::TRIAL, trial as u64])
}

/// One trial, replayable from its seed alone.
pub fn run_trial(config: &SimConfig, trial: usize, seed: u64) -> Result<TrialRecord> {
    let sub = |t: u64| derive_seed(seed, &[t]);
    let expert = sample_expert(config.d, sub(tag::EXPERT))?;
    let set = generate_set(&expert, config.n_total(), sub(tag::DATA))?;
    let probe = match config.probe_mode {
        ProbeMode::ConditionedGaussian => make_probe(&expert, config.gamma_probe, sub(tag::PROBE))?,
        ProbeMode::TrainedEpochs(k) => train_probe(&set, k, sub(tag::PROBE))?,
    };
    let mut profile = compute_margins(&probe, &set)?;
    let kept = select_subset(&set, &mut profile, config.f, config.kind, config.convention, sub(tag::SELECT))?;
    let fit = train_max_margin(&kept, config.tol)?;
    let holdout = if config.holdout {
        Some(generate_set(&expert, HOLDOUT_PER_DIM * config.d, sub(tag::HOLDOUT))?)
    } else {
        None
    };
    let (r, epsilon_analytic, epsilon_empirical) = measure_error(&fit.weights, &expert, holdout.as_ref())?;
    Ok(TrialRecord {
        trial,
        seed,
        n_kept: kept.n,
        r,
        kappa: fit.kappa,
        epsilon_analytic,
        epsilon_empirical,
        gamma_achieved: angle_between(&probe, &expert.weights)?,
    })
}

pub fn run_experiment(config: &SimConfig, exec: Exec) -> Result<SimResult> {
    config.validate()?;
    let outcomes = exec.map_range(config.trials, |t| {
        let seed = trial_seed(config.master_seed, t);
        run_trial(config, t, seed).map_err(|e| Error::Trial { trial: t, seed, source: Box::new(e) })
    });
    let per_trial = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = per_trial.iter().map(|t| t.epsilon_analytic).collect();
    let (mean_epsilon, std_error) = mean_and_stderr(&eps);
    let (mean_epsilon_empirical, std_error_empirical) = if config.holdout {
        let emp: Vec<f64> = per_trial.iter().filter_map(|t| t.epsilon_empirical).collect();
        let (m, s) = mean_and_stderr(&emp);
        (Some(m), s)
    } else {
        (None, None)
    };
    Ok(SimResult {
        mean_epsilon,
        std_error,
        mean_epsilon_empirical,
        std_error_empirical,
        per_trial,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trials: usize) -> SimConfig {
        SimConfig {
            trials,
            master_seed: 11,
            ..SimConfig::for_alpha_syn(20, 1.0, 0.5, 0.0, StrategyKind::KeepHardest)
        }
    }

    #[test]
    fn measure_error_examples() {
        let e = ExpertModel { weights: vec![2f64.sqrt(), 0.0], d: 2 };
        let (r, eps, emp) = measure_error(&[1.0, 0.0], &e, None).unwrap();
        assert!((r - 1.0).abs() < 1e-15 && eps.abs() < 1e-7 && emp.is_none());
        let (r, eps, _) = measure_error(&[0.0, 3.0], &e, None).unwrap();
        assert!(r.abs() < 1e-15 && (eps - 0.5).abs() < 1e-15);
        let (_, eps, _) = measure_error(&[3f64.sqrt(), 1.0], &e, None).unwrap();
        assert!((eps - 1.0 / 6.0).abs() < 1e-12);
        assert!(measure_error(&[0.0, 0.0], &e, None).is_err());
        assert!(measure_error(&[1.0], &e, None).is_err());
    }

    #[test]
    fn single_trial_has_no_stderr() {
        let r = run_experiment(&small(1), Exec::Sequential).unwrap();
        assert_eq!(r.mean_epsilon, r.per_trial[0].epsilon_analytic);
        assert!(r.std_error.is_none());
        assert_eq!(r.per_trial[0].n_kept, 20);
    }

    #[test]
    fn results_are_reproducible_under_any_schedule() {
        let c = small(8);
        let a = run_experiment(&c, Exec::Sequential).unwrap();
        let b = run_experiment(&c, Exec::Parallel).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let replay = run_trial(&c, 5, a.per_trial[5].seed).unwrap();
        assert_eq!(replay, a.per_trial[5]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for c in [
            SimConfig { trials: 0, ..small(1) },
            SimConfig { d: 1, ..small(1) },
            SimConfig { f: 0.0, ..small(1) },
            SimConfig { probe_mode: ProbeMode::TrainedEpochs(0), ..small(1) },
        ] {
            assert!(run_experiment(&c, Exec::Sequential).is_err());
        }
    }

    #[test]
    fn trained_probe_reports_its_angle() {
        let c = SimConfig { probe_mode: ProbeMode::TrainedEpochs(3), ..small(2) };
        let r = run_experiment(&c, Exec::Sequential).unwrap();
        for t in &r.per_trial {
            assert!(t.gamma_achieved > 0.0 && t.gamma_achieved < std::f64::consts::FRAC_PI_2);
        }
    }
}
