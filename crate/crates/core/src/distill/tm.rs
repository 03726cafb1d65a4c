//! Trajectory matching: a student started on an expert checkpoint takes
//! `N` steps on the synthetic set and is scored against the checkpoint `M`
//! steps ahead.

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{
    eval_seed, evaluate_synthetic, penalty_and_grad, should_eval, DistillOutcome, DistillTrace, MatchConfig,
    SyntheticSet, ToyModel, ToyTask, TraceRecord,
};
use crate::distill::Dataset;
use crate::error::{Error, Result};
use crate::math::linalg::{axpy, dot, norm};
use crate::rng::{derive_seed, tag, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub epochs_per_checkpoint: usize,
    pub checkpoints: usize,
    pub eta: f64,
    pub batch: usize,
    pub init_scale: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self { epochs_per_checkpoint: 1, checkpoints: 20, eta: 0.1, batch: 64, init_scale: 1.0 }
    }
}

/// Expert parameters at initialisation and after every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBank {
    pub checkpoints: Vec<Vec<f64>>,
    pub classes: usize,
    pub d: usize,
    pub config: BankConfig,
}

impl TrajectoryBank {
    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }
}

/// Trains the toy model on real data by minibatch SGD, saving the weights
/// every `epochs_per_checkpoint` epochs.
pub fn build_expert_bank(real: &Dataset, config: &BankConfig, seed: u64) -> Result<TrajectoryBank> {
    if config.epochs_per_checkpoint == 0 || config.checkpoints == 0 || config.batch == 0 {
        return Err(Error::Precondition("bank counts must be at least 1".into()));
    }
    let mut model = ToyModel::random(real.classes, real.d, config.init_scale, derive_seed(seed, &[tag::INIT]));
    let mut rng = Rng::seed_from_u64(derive_seed(seed, &[tag::BATCH]));
    let mut checkpoints = vec![model.weights.clone()];
    for _ in 0..config.checkpoints {
        for _ in 0..config.epochs_per_checkpoint {
            model.sgd_epoch(real, config.batch, config.eta, &mut rng)?;
        }
        checkpoints.push(model.weights.clone());
    }
    Ok(TrajectoryBank { checkpoints, classes: real.classes, d: real.d, config: config.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmLoss {
    pub loss: f64,
    pub matching: f64,
    /// Penalty value `‖∇_θ L_syn‖^p` (at the last student step, or averaged).
    pub reg: f64,
    /// `‖∇_θ L_syn‖` at the last student step.
    pub grad_norm_syn: f64,
    pub grad_syn: Vec<f64>,
}

/// Normalised trajectory mismatch plus `λ ‖∇_θ L_syn‖^p`, differentiated
/// through the unrolled student steps. `lambda = None` drops the penalty.
pub fn tm_sdc_loss(
    bank: &TrajectoryBank,
    t: usize,
    syn: &SyntheticSet,
    config: &MatchConfig,
    lambda: Option<f64>,
) -> Result<TmLoss> {
    let (m, n_steps, eta) = (config.expert_epochs, config.student_steps, config.eta_model);
    if t + m >= bank.len() {
        return Err(Error::Precondition(format!(
            "start {t} + {m} steps runs past a bank of {} checkpoints",
            bank.len()
        )));
    }
    if syn.classes != bank.classes || syn.d != bank.d {
        return Err(Error::DimensionMismatch { expected: bank.classes * bank.d, got: syn.classes * syn.d });
    }
    let (start, target) = (&bank.checkpoints[t], &bank.checkpoints[t + m]);
    let gap: Vec<f64> = target.iter().zip(start).map(|(a, b)| a - b).collect();
    let den = dot(&gap, &gap);
    if den == 0.0 {
        return Err(Error::Domain(format!("expert did not move between checkpoints {t} and {}", t + m)));
    }
    let data = syn.dataset();
    let base = ToyModel::zeros(bank.classes, bank.d).with_weights(start.clone());

    let mut thetas = vec![start.clone()];
    let mut grads = Vec::with_capacity(n_steps + 1);
    for i in 0..=n_steps {
        let (_, g) = base.with_weights(thetas[i].clone()).loss_and_grad(&data)?;
        if i < n_steps {
            let mut next = thetas[i].clone();
            axpy(-eta, &g, &mut next);
            thetas.push(next);
        }
        grads.push(g);
    }
    let last = &thetas[n_steps];
    let resid: Vec<f64> = last.iter().zip(target).map(|(a, b)| a - b).collect();
    let matching = dot(&resid, &resid) / den;
    let grad_norm_syn = norm(&grads[n_steps]);

    // penalty points and their weights
    let points: Vec<usize> = if config.reg_along_trajectory && n_steps > 0 {
        (0..n_steps).collect()
    } else {
        vec![n_steps]
    };
    let w = 1.0 / points.len() as f64;
    let mut reg = 0.0;
    let mut reg_grads: Vec<Option<Vec<f64>>> = vec![None; n_steps + 1];
    for &j in &points {
        let (r, rg) = penalty_and_grad(&grads[j], config.reg_exponent);
        reg += w * r;
        if let Some(l) = lambda {
            reg_grads[j] = Some(rg.iter().map(|v| l * w * v).collect());
        }
    }

    let model_at = |i: usize| base.with_weights(thetas[i].clone());
    let mut grad_syn = vec![0.0; data.features.len()];
    let mut bar: Vec<f64> = resid.iter().map(|v| 2.0 * v / den).collect();
    let add_penalty = |i: usize, bar: &mut Vec<f64>, grad_syn: &mut Vec<f64>| -> Result<()> {
        if let Some(a) = &reg_grads[i] {
            let mi = model_at(i);
            axpy(1.0, &mi.feature_vjp(&data, a)?, grad_syn);
            axpy(1.0, &mi.hvp(&data, a)?, bar);
        }
        Ok(())
    };
    add_penalty(n_steps, &mut bar, &mut grad_syn)?;
    for i in (0..n_steps).rev() {
        let mi = model_at(i);
        axpy(-eta, &mi.feature_vjp(&data, &bar)?, &mut grad_syn);
        let h = mi.hvp(&data, &bar)?;
        axpy(-eta, &h, &mut bar);
        add_penalty(i, &mut bar, &mut grad_syn)?;
    }

    let loss = match lambda {
        Some(l) => matching + l * reg,
        None => matching,
    };
    Ok(TmLoss { loss, matching, reg, grad_norm_syn, grad_syn })
}

/// Trajectory-matching distillation: each iteration picks a random start
/// checkpoint and takes one gradient step on the synthetic features.
pub fn distill_tm(task: &ToyTask, bank: &TrajectoryBank, config: &MatchConfig, seed: u64) -> Result<DistillOutcome> {
    config.validate()?;
    if config.student_steps >= config.expert_epochs {
        return Err(Error::Precondition(format!(
            "student steps N = {} must be fewer than expert steps M = {}",
            config.student_steps, config.expert_epochs
        )));
    }
    if bank.len() <= config.expert_epochs {
        return Err(Error::Precondition(format!(
            "bank of {} checkpoints is too short for M = {}",
            bank.len(),
            config.expert_epochs
        )));
    }
    let max_start = bank.len() - 1 - config.expert_epochs;
    let mut syn = SyntheticSet::init(&task.train, config.ipc, config.init, derive_seed(seed, &[tag::TASK]))?;
    let mut rng = Rng::seed_from_u64(derive_seed(seed, &[tag::BATCH]));
    let all: Vec<usize> = (0..syn.len()).collect();
    let mut trace = DistillTrace::default();

    for step in 0..config.iterations {
        let wrap = |e: Error| Error::Step { step, source: Box::new(e) };
        let penalty = config.penalty(step).map_err(wrap)?;
        let t = rng.random_range(0..=max_start);
        let out = tm_sdc_loss(bank, t, &syn, config, penalty).map_err(wrap)?;
        syn.step(&all, &out.grad_syn, config.eta_syn);
        let test_accuracy = if should_eval(config, step) {
            Some(evaluate_synthetic(&syn, &task.test, config.eval_steps, config.eta_model, eval_seed(seed)).map_err(wrap)?)
        } else {
            None
        };
        trace.records.push(TraceRecord {
            step,
            lambda: penalty.unwrap_or(0.0),
            matching_loss: out.matching,
            reg_value: out.reg,
            grad_norm_syn: out.grad_norm_syn,
            test_accuracy,
        });
    }
    Ok(DistillOutcome { synthetic: syn, trace: trace.finish() })
}
