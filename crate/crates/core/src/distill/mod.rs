//! Gradient matching and trajectory matching on a softmax-linear toy
//! model, with the gradient-norm penalty on the synthetic batch (sample
//! difficulty correction, SDC) and its adaptive λ schedule.
//!
//! All derivatives with respect to synthetic features are exact: the
//! model gradient is differentiated analytically, and trajectory matching
//! back-propagates through the unrolled student steps with Hessian-vector
//! products.

mod gm;
mod model;
mod tm;

pub use gm::{distill_gm, gm_filtered_loss, gm_loss, gm_sdc_loss, matching_distance, FilteredLoss, GmLoss};
pub use model::{toy_blobs, xor_blobs, Dataset, ToyModel, ToyTask};
pub use tm::{build_expert_bank, distill_tm, tm_sdc_loss, BankConfig, TmLoss, TrajectoryBank};

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::difficulty::ema_smooth;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::math::linalg::norm;
use crate::rng::{derive_seed, tag, Rng};

pub const ETA_GRID: [f64; 3] = [0.01, 0.1, 1.0];
pub const EMA_DECAY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LambdaSchedule {
    Constant { lambda_0: f64 },
    Logarithmic { lambda_0: f64, lambda_end: f64, total_steps: usize },
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::Constant { lambda_0: 0.002 }
    }
}

/// λ at a distillation step. The logarithmic schedule interpolates
/// `ln λ` linearly and holds `lambda_end` after `total_steps`.
pub fn lambda_at(schedule: &LambdaSchedule, step: usize) -> Result<f64> {
    match *schedule {
        LambdaSchedule::Constant { lambda_0 } => {
            if !(lambda_0 >= 0.0 && lambda_0.is_finite()) {
                return Err(Error::Domain(format!("lambda_0 must be non-negative, got {lambda_0}")));
            }
            Ok(lambda_0)
        }
        LambdaSchedule::Logarithmic { lambda_0, lambda_end, total_steps } => {
            if !(lambda_0 > 0.0 && lambda_end > 0.0) {
                return Err(Error::Domain(format!(
                    "logarithmic schedule needs positive endpoints, got {lambda_0} → {lambda_end}"
                )));
            }
            if step == 0 {
                return Ok(lambda_0);
            }
            if step >= total_steps {
                return Ok(lambda_end);
            }
            let frac = step as f64 / total_steps as f64;
            Ok((lambda_0.ln() + frac * (lambda_end.ln() - lambda_0.ln())).exp())
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    CosineGroupwise,
    L2,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynInit {
    #[default]
    Real,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub ipc: usize,
    pub lambda: LambdaSchedule,
    /// Run the unregularised method; no penalty term is evaluated.
    pub baseline: bool,
    pub reg_exponent: u32,
    pub metric: Metric,
    /// Distillation iterations.
    pub iterations: usize,
    /// Model steps per iteration in gradient matching (T).
    pub outer_steps: usize,
    /// Expert checkpoints ahead of the start in trajectory matching (M).
    pub expert_epochs: usize,
    /// Student steps in trajectory matching (N).
    pub student_steps: usize,
    pub eta_model: f64,
    pub eta_syn: f64,
    pub batch_real: usize,
    /// Synthetic samples per class and step in gradient matching.
    pub batch_syn: usize,
    /// Naive variant: match only real samples whose gradient norm is ≤ tau.
    pub tau: Option<f64>,
    pub init: SynInit,
    /// Average the trajectory-matching penalty over the student steps
    /// instead of taking it at the last one.
    pub reg_along_trajectory: bool,
    /// Evaluate test accuracy every this many iterations (0: last only).
    pub eval_every: usize,
    pub eval_steps: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            ipc: 1,
            lambda: LambdaSchedule::default(),
            baseline: false,
            reg_exponent: 2,
            metric: Metric::CosineGroupwise,
            iterations: 200,
            outer_steps: 10,
            expert_epochs: 4,
            student_steps: 2,
            eta_model: 0.1,
            eta_syn: 0.1,
            batch_real: 64,
            batch_syn: 1,
            tau: None,
            init: SynInit::Real,
            reg_along_trajectory: false,
            eval_every: 0,
            eval_steps: 200,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ipc == 0 || self.batch_real == 0 || self.batch_syn == 0 {
            return Err(Error::Precondition("ipc and batch sizes must be positive".into()));
        }
        if !matches!(self.reg_exponent, 1 | 2) {
            return Err(Error::Domain(format!("reg_exponent must be 1 or 2, got {}", self.reg_exponent)));
        }
        if !(self.eta_model > 0.0 && self.eta_syn > 0.0) {
            return Err(Error::Domain("learning rates must be positive".into()));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return Err(Error::Domain(format!("tau must be positive, got {t}")));
            }
        }
        lambda_at(&self.lambda, 0)?;
        Ok(())
    }

    /// λ at `step`, or `None` for the baseline.
    fn penalty(&self, step: usize) -> Result<Option<f64>> {
        if self.baseline {
            Ok(None)
        } else {
            lambda_at(&self.lambda, step).map(Some)
        }
    }
}

/// `‖g‖^p` and its gradient.
pub(crate) fn penalty_and_grad(g: &[f64], exponent: u32) -> (f64, Vec<f64>) {
    let n = norm(g);
    match exponent {
        1 => {
            let s = if n > 0.0 { 1.0 / n } else { 0.0 };
            (n, g.iter().map(|v| v * s).collect())
        }
        _ => (n * n, g.iter().map(|v| 2.0 * v).collect()),
    }
}

/// Learnable synthetic features, class-major: rows `c·ipc .. (c+1)·ipc`
/// belong to class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSet {
    pub features: Vec<f64>,
    pub ipc: usize,
    pub classes: usize,
    pub d: usize,
}

impl SyntheticSet {
    pub fn init(real: &Dataset, ipc: usize, how: SynInit, seed: u64) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(real.classes * ipc * real.d);
        for c in 0..real.classes {
            match how {
                SynInit::Real => {
                    let pool = real.class_indices(c);
                    if pool.len() < ipc {
                        return Err(Error::Precondition(format!(
                            "class {c} has {} real samples, fewer than ipc = {ipc}",
                            pool.len()
                        )));
                    }
                    for k in index::sample(&mut rng, pool.len(), ipc) {
                        features.extend_from_slice(real.row(pool[k]));
                    }
                }
                SynInit::Noise => features.extend((0..ipc * real.d).map(|_| rng.sample::<f64, _>(StandardNormal))),
            }
        }
        Ok(Self { features, ipc, classes: real.classes, d: real.d })
    }

    pub fn len(&self) -> usize {
        self.ipc * self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dataset(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: (0..self.len()).map(|i| i / self.ipc).collect(),
            d: self.d,
            classes: self.classes,
        }
    }

    pub fn rows(&self, indices: &[usize]) -> Dataset {
        self.dataset().subset(indices)
    }

    /// Subtracts `eta · grad` from the given rows.
    pub(crate) fn step(&mut self, indices: &[usize], grad: &[f64], eta: f64) {
        let d = self.d;
        for (k, &i) in indices.iter().enumerate() {
            for j in 0..d {
                self.features[i * d + j] -= eta * grad[k * d + j];
            }
        }
    }

    pub fn per_class(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.classes)
            .map(|c| (0..self.ipc).map(|k| self.features[(c * self.ipc + k) * self.d..][..self.d].to_vec()).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub lambda: f64,
    pub matching_loss: f64,
    pub reg_value: f64,
    pub grad_norm_syn: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillTrace {
    pub records: Vec<TraceRecord>,
    pub grad_norm_ema: Vec<f64>,
}

impl DistillTrace {
    pub(crate) fn finish(mut self) -> Self {
        let g: Vec<f64> = self.records.iter().map(|r| r.grad_norm_syn).collect();
        self.grad_norm_ema = ema_smooth(&g, EMA_DECAY).unwrap_or_default();
        self
    }

    /// Mean synthetic gradient norm over the second half of the run.
    pub fn late_grad_norm(&self) -> f64 {
        let tail = &self.records[self.records.len() / 2..];
        tail.iter().map(|r| r.grad_norm_syn).sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.test_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillOutcome {
    pub synthetic: SyntheticSet,
    pub trace: DistillTrace,
}

/// Test accuracy of a fresh model trained by gradient descent on the
/// synthetic set.
pub fn evaluate_synthetic(syn: &SyntheticSet, test: &Dataset, steps: usize, eta: f64, seed: u64) -> Result<f64> {
    let mut m = ToyModel::random(syn.classes, syn.d, 1.0, seed);
    m.train(&syn.dataset(), steps, eta)?;
    Ok(m.accuracy(test))
}

pub(crate) fn should_eval(config: &MatchConfig, step: usize) -> bool {
    step + 1 == config.iterations || (config.eval_every > 0 && (step + 1) % config.eval_every == 0)
}

pub(crate) fn eval_seed(seed: u64) -> u64 {
    derive_seed(seed, &[tag::EVAL])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    Gradient,
    Trajectory,
}

/// Runs the baseline at every `eta_syn` in [`ETA_GRID`] and returns the
/// one with the best final test accuracy (first on ties), with the scores.
pub fn tune_eta_syn(
    task: &ToyTask,
    bank: Option<&TrajectoryBank>,
    config: &MatchConfig,
    mode: MatchMode,
    seed: u64,
    exec: Exec,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let scores = exec.map(&ETA_GRID, |&eta| {
        let c = MatchConfig { eta_syn: eta, baseline: true, ..config.clone() };
        let out = match (mode, bank) {
            (MatchMode::Gradient, _) => distill_gm(task, &c, seed),
            (MatchMode::Trajectory, Some(b)) => distill_tm(task, b, &c, seed),
            (MatchMode::Trajectory, None) => Err(Error::Precondition("trajectory matching needs a bank".into())),
        }?;
        Ok((eta, out.trace.final_accuracy().unwrap_or(0.0)))
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let best = scores.iter().fold(scores[0], |b, &s| if s.1 > b.1 { s } else { b });
    Ok((best.0, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = LambdaSchedule::Logarithmic { lambda_0: 0.02, lambda_end: 0.08, total_steps: 10_000 };
        assert!((lambda_at(&s, 0).unwrap() - 0.02).abs() < 1e-12);
        assert!((lambda_at(&s, 10_000).unwrap() - 0.08).abs() < 1e-12);
        assert!((lambda_at(&s, 5_000).unwrap() - 0.04).abs() < 1e-12);
        assert_eq!(lambda_at(&s, 20_000).unwrap(), 0.08);
        let mut prev = 0.0;
        for step in (0..=10_000).step_by(500) {
            let l = lambda_at(&s, step).unwrap();
            assert!(l > prev);
            prev = l;
        }
        let bad = LambdaSchedule::Logarithmic { lambda_0: 0.0, lambda_end: 0.08, total_steps: 10 };
        assert!(lambda_at(&bad, 3).is_err());
        assert_eq!(lambda_at(&LambdaSchedule::Constant { lambda_0: 0.002 }, 7).unwrap(), 0.002);
    }

    #[test]
    fn synthetic_init_from_real_rows() {
        let task = toy_blobs(20, 5, 3, 2.0, 1).unwrap();
        let s = SyntheticSet::init(&task.train, 2, SynInit::Real, 3).unwrap();
        let data = s.dataset();
        assert_eq!(data.labels, vec![0, 0, 1, 1]);
        for i in 0..4 {
            let found = (0..task.train.len())
                .any(|j| task.train.row(j) == data.row(i) && task.train.labels[j] == data.labels[i]);
            assert!(found);
        }
        assert_eq!(s.per_class()[1][0], data.row(2));
        assert!(SyntheticSet::init(&task.train, 50, SynInit::Real, 3).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MatchConfig::default().validate().is_ok());
        assert!(MatchConfig { reg_exponent: 3, ..Default::default() }.validate().is_err());
        assert!(MatchConfig { tau: Some(0.0), ..Default::default() }.validate().is_err());
        let neg = LambdaSchedule::Constant { lambda_0: -1.0 };
        assert!(MatchConfig { lambda: neg, ..Default::default() }.validate().is_err());
    }
}
