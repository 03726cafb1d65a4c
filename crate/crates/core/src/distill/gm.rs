//! Gradient matching (per-class alignment of model gradients on real and
//! synthetic batches).

use rand::seq::index;
use rand::SeedableRng;

use super::{
    eval_seed, evaluate_synthetic, penalty_and_grad, should_eval, Dataset, DistillOutcome, DistillTrace,
    MatchConfig, Metric, SyntheticSet, ToyModel, ToyTask, TraceRecord,
};
use crate::error::{Error, Result};
use crate::math::linalg::{dot, norm};
use crate::rng::{derive_seed, tag, Rng};

struct Distance {
    value: f64,
    grad_b: Vec<f64>,
    zero_rows: usize,
}

fn distance(a: &[f64], b: &[f64], rows: usize, metric: Metric) -> Result<Distance> {
    if a.len() != b.len() || rows == 0 || a.len() % rows != 0 {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    match metric {
        Metric::L2 => {
            let diff: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
            let value = norm(&diff);
            let s = if value > 0.0 { 1.0 / value } else { 0.0 };
            Ok(Distance { value, grad_b: diff.iter().map(|v| v * s).collect(), zero_rows: 0 })
        }
        Metric::CosineGroupwise => {
            let d = a.len() / rows;
            let mut value = 0.0;
            let mut grad_b = vec![0.0; b.len()];
            let mut zero_rows = 0;
            for r in 0..rows {
                let (ar, br) = (&a[r * d..(r + 1) * d], &b[r * d..(r + 1) * d]);
                let (na, nb) = (norm(ar), norm(br));
                if na == 0.0 || nb == 0.0 {
                    value += 1.0;
                    zero_rows += 1;
                    continue;
                }
                let cos = dot(ar, br) / (na * nb);
                value += 1.0 - cos;
                for j in 0..d {
                    grad_b[r * d + j] = -(ar[j] / (na * nb) - cos * br[j] / (nb * nb));
                }
            }
            Ok(Distance { value, grad_b, zero_rows })
        }
    }
}

/// Distance between two `C x d` gradients: the sum over class rows of
/// `1 − cos`, or the Euclidean norm of the difference. A zero row under
/// the cosine metric counts as 1.
pub fn matching_distance(grad_a: &[f64], grad_b: &[f64], classes: usize, metric: Metric) -> Result<f64> {
    let out = distance(grad_a, grad_b, classes, metric)?;
    if out.zero_rows > 0 {
        log::debug!("{} zero gradient rows scored as maximal mismatch", out.zero_rows);
    }
    Ok(out.value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmLoss {
    pub loss: f64,
    pub matching: f64,
    /// `‖∇_θ L_syn‖^p`.
    pub reg: f64,
    pub grad_norm_syn: f64,
    /// Row-major like the synthetic batch features.
    pub grad_syn: Vec<f64>,
    pub zero_rows: usize,
}

fn gm_core(
    model: &ToyModel,
    real: &Dataset,
    syn: &Dataset,
    penalty: Option<(f64, u32)>,
    metric: Metric,
) -> Result<GmLoss> {
    let (_, g_real) = model.loss_and_grad(real)?;
    let (_, g_syn) = model.loss_and_grad(syn)?;
    let dist = distance(&g_real, &g_syn, model.classes, metric)?;
    let grad_norm_syn = norm(&g_syn);
    let (loss, reg, upstream) = match penalty {
        None => (dist.value, grad_norm_syn.powi(2), dist.grad_b),
        Some((lambda, p)) => {
            let (reg, reg_grad) = penalty_and_grad(&g_syn, p);
            let up = dist.grad_b.iter().zip(&reg_grad).map(|(a, b)| a + lambda * b).collect();
            (dist.value + lambda * reg, reg, up)
        }
    };
    Ok(GmLoss {
        loss,
        matching: dist.value,
        reg,
        grad_norm_syn,
        grad_syn: model.feature_vjp(syn, &upstream)?,
        zero_rows: dist.zero_rows,
    })
}

/// Plain matching loss `D(∇L_real, ∇L_syn)` with its feature gradient.
/// `reg` reports the squared synthetic gradient norm for monitoring only.
pub fn gm_loss(model: &ToyModel, real: &Dataset, syn: &Dataset, metric: Metric) -> Result<GmLoss> {
    gm_core(model, real, syn, None, metric)
}

/// `D(∇L_real, ∇L_syn) + λ ‖∇L_syn‖^p` and its exact gradient with respect
/// to the synthetic features.
pub fn gm_sdc_loss(
    model: &ToyModel,
    real: &Dataset,
    syn: &Dataset,
    lambda: f64,
    reg_exponent: u32,
    metric: Metric,
) -> Result<GmLoss> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be non-negative, got {lambda}")));
    }
    gm_core(model, real, syn, Some((lambda, reg_exponent)), metric)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredLoss {
    pub loss: f64,
    /// Indices into the real batch, ascending.
    pub kept_real: Vec<usize>,
    /// Indices into the synthetic pool, ascending.
    pub syn_used: Vec<usize>,
}

/// Naive easy-sample matching: keeps the real samples whose own gradient
/// norm is at most `tau`, thins the synthetic pool to that many samples
/// when it is larger, and matches the reduced batches.
pub fn gm_filtered_loss(
    model: &ToyModel,
    real: &Dataset,
    syn_pool: &Dataset,
    tau: f64,
    metric: Metric,
    seed: u64,
) -> Result<FilteredLoss> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let norms = model.per_sample_grad_norms(real)?;
    let kept_real: Vec<usize> = (0..real.len()).filter(|&i| norms[i] <= tau).collect();
    if kept_real.is_empty() {
        return Err(Error::EmptyBatch(format!(
            "no real sample has gradient norm ≤ tau = {tau} (smallest {:.4}); increase tau",
            norms.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    let syn_used: Vec<usize> = if syn_pool.len() > kept_real.len() {
        let mut rng = Rng::seed_from_u64(seed);
        let mut v = index::sample(&mut rng, syn_pool.len(), kept_real.len()).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..syn_pool.len()).collect()
    };
    let (_, g_real) = model.loss_and_grad(&real.subset(&kept_real))?;
    let (_, g_syn) = model.loss_and_grad(&syn_pool.subset(&syn_used))?;
    let loss = matching_distance(&g_real, &g_syn, model.classes, metric)?;
    Ok(FilteredLoss { loss, kept_real, syn_used })
}

fn sample_sorted(rng: &mut Rng, pool: &[usize], k: usize) -> Vec<usize> {
    if k >= pool.len() {
        return pool.to_vec();
    }
    let mut v: Vec<usize> = index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    v.sort_unstable();
    v
}

/// Gradient-matching distillation.
///
/// Each iteration draws a fresh model, then for `outer_steps` rounds
/// updates every class's synthetic samples on the per-class matching loss
/// (plus the penalty unless `baseline`) and takes one model step on the
/// whole synthetic set.
pub fn distill_gm(task: &ToyTask, config: &MatchConfig, seed: u64) -> Result<DistillOutcome> {
    config.validate()?;
    let real = &task.train;
    let classes = real.classes;
    let pools: Vec<Vec<usize>> = (0..classes).map(|c| real.class_indices(c)).collect();
    if let Some(c) = pools.iter().position(|p| p.len() < config.batch_real) {
        return Err(Error::Precondition(format!(
            "class {c} has {} samples, fewer than batch_real = {}",
            pools[c].len(),
            config.batch_real
        )));
    }
    let mut syn = SyntheticSet::init(real, config.ipc, config.init, derive_seed(seed, &[tag::TASK]))?;
    let mut rng = Rng::seed_from_u64(derive_seed(seed, &[tag::BATCH]));
    let mut trace = DistillTrace::default();

    for step in 0..config.iterations {
        let wrap = |e: Error| Error::Step { step, source: Box::new(e) };
        let penalty = config.penalty(step).map_err(wrap)?;
        let mut model = ToyModel::random(classes, real.d, 1.0, derive_seed(seed, &[tag::INIT, step as u64]));
        let (mut matching, mut reg, mut gnorm, mut count) = (0.0, 0.0, 0.0, 0.0f64);
        for _ in 0..config.outer_steps {
            for c in 0..classes {
                let real_idx = sample_sorted(&mut rng, &pools[c], config.batch_real);
                let block: Vec<usize> = (c * config.ipc..(c + 1) * config.ipc).collect();
                let mut syn_idx = sample_sorted(&mut rng, &block, config.batch_syn);
                let mut real_batch = real.subset(&real_idx);
                if let Some(tau) = config.tau {
                    let f = gm_filtered_loss(
                        &model,
                        &real_batch,
                        &syn.rows(&syn_idx),
                        tau,
                        config.metric,
                        rand::Rng::random(&mut rng),
                    )
                    .map_err(wrap)?;
                    real_batch = real_batch.subset(&f.kept_real);
                    syn_idx = f.syn_used.iter().map(|&k| syn_idx[k]).collect();
                }
                let syn_batch = syn.rows(&syn_idx);
                let out = match penalty {
                    None => gm_loss(&model, &real_batch, &syn_batch, config.metric),
                    Some(l) => gm_sdc_loss(&model, &real_batch, &syn_batch, l, config.reg_exponent, config.metric),
                }
                .map_err(wrap)?;
                syn.step(&syn_idx, &out.grad_syn, config.eta_syn);
                matching += out.matching;
                reg += out.grad_norm_syn.powi(config.reg_exponent as i32);
                gnorm += out.grad_norm_syn;
                count += 1.0;
            }
            let (_, g) = model.loss_and_grad(&syn.dataset()).map_err(wrap)?;
            for (w, gi) in model.weights.iter_mut().zip(&g) {
                *w -= config.eta_model * gi;
            }
        }
        let test_accuracy = if should_eval(config, step) {
            Some(evaluate_synthetic(&syn, &task.test, config.eval_steps, config.eta_model, eval_seed(seed)).map_err(wrap)?)
        } else {
            None
        };
        trace.records.push(TraceRecord {
            step,
            lambda: penalty.unwrap_or(0.0),
            matching_loss: matching / count.max(1.0),
            reg_value: reg / count.max(1.0),
            grad_norm_syn: gnorm / count.max(1.0),
            test_accuracy,
        });
    }
    Ok(DistillOutcome { synthetic: syn, trace: trace.finish() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::toy_blobs;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn random_batch(rng: &mut Rng, n: usize, d: usize, c: usize, class: Option<usize>) -> Dataset {
        let features = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let labels = (0..n).map(|_| class.unwrap_or_else(|| rng.random_range(0..c))).collect();
        Dataset::new(features, labels, d, c).unwrap()
    }

    #[test]
    fn distance_examples() {
        let a = [1.0, 2.0, -1.0, 0.5, 3.0, 0.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        for m in [Metric::CosineGroupwise, Metric::L2] {
            assert!(matching_distance(&a, &a, 2, m).unwrap().abs() < 1e-15);
        }
        assert!((matching_distance(&a, &neg, 2, Metric::CosineGroupwise).unwrap() - 4.0).abs() < 1e-12);
        let z = [0.0, 0.0, 0.0, 0.5, 3.0, 0.0];
        assert!((matching_distance(&a, &z, 2, Metric::CosineGroupwise).unwrap() - 1.0).abs() < 1e-12);
        let mut rng = Rng::seed_from_u64(0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
            let v = matching_distance(&x, &y, 3, Metric::CosineGroupwise).unwrap();
            assert!((0.0..=6.0).contains(&v));
        }
        assert!(matching_distance(&a, &a[..4], 2, Metric::L2).is_err());
    }

    #[test]
    fn lambda_zero_is_the_bare_distance() {
        let mut rng = Rng::seed_from_u64(1);
        let real = random_batch(&mut rng, 8, 4, 3, Some(1));
        let syn = random_batch(&mut rng, 2, 4, 3, Some(1));
        let m = ToyModel::random(3, 4, 1.0, 5);
        let bare = gm_loss(&m, &real, &syn, Metric::CosineGroupwise).unwrap();
        let zero = gm_sdc_loss(&m, &real, &syn, 0.0, 2, Metric::CosineGroupwise).unwrap();
        assert_eq!(bare.loss.to_bits(), zero.loss.to_bits());
        assert_eq!(bare.grad_syn, zero.grad_syn);
        // affine and increasing in λ
        let l1 = gm_sdc_loss(&m, &real, &syn, 0.1, 2, Metric::CosineGroupwise).unwrap().loss;
        let l2 = gm_sdc_loss(&m, &real, &syn, 0.2, 2, Metric::CosineGroupwise).unwrap().loss;
        assert!(l1 > zero.loss && l2 > l1);
        assert!(((l2 - l1) - (l1 - zero.loss)).abs() < 1e-12);
    }

    #[test]
    fn matched_gradients_leave_only_the_penalty() {
        let mut rng = Rng::seed_from_u64(2);
        let syn = random_batch(&mut rng, 3, 4, 2, Some(0));
        let m = ToyModel::random(2, 4, 1.0, 3);
        let out = gm_sdc_loss(&m, &syn, &syn, 0.5, 2, Metric::L2).unwrap();
        let g = m.loss_and_grad(&syn).unwrap().1;
        assert!((out.loss - 0.5 * dot(&g, &g)).abs() < 1e-12);
    }

    #[test]
    fn filtering_keeps_exactly_the_easy_samples() {
        let mut rng = Rng::seed_from_u64(3);
        let real = random_batch(&mut rng, 20, 4, 2, None);
        let syn = random_batch(&mut rng, 2, 4, 2, None);
        let m = ToyModel::random(2, 4, 2.0, 4);
        let norms = m.per_sample_grad_norms(&real).unwrap();

        let all = gm_filtered_loss(&m, &real, &syn, f64::INFINITY, Metric::CosineGroupwise, 0).unwrap();
        let g_r = m.loss_and_grad(&real).unwrap().1;
        let g_s = m.loss_and_grad(&syn).unwrap().1;
        let bare = matching_distance(&g_r, &g_s, 2, Metric::CosineGroupwise).unwrap();
        assert_eq!(all.loss.to_bits(), bare.to_bits());

        let mut sorted = norms.clone();
        sorted.sort_by(f64::total_cmp);
        let tau = sorted[9];
        let f = gm_filtered_loss(&m, &real, &syn, tau, Metric::CosineGroupwise, 0).unwrap();
        let expect: Vec<usize> = (0..20).filter(|&i| norms[i] <= tau).collect();
        assert_eq!(f.kept_real, expect);
        let low = sorted[0] * 0.5;
        assert!(matches!(
            gm_filtered_loss(&m, &real, &syn, low, Metric::CosineGroupwise, 0),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn baseline_and_lambda_zero_runs_are_identical() {
        let task = toy_blobs(80, 40, 6, 2.0, 1).unwrap();
        let base = MatchConfig { iterations: 12, outer_steps: 3, batch_real: 16, baseline: true, ..Default::default() };
        let zero = MatchConfig {
            baseline: false,
            lambda: crate::distill::LambdaSchedule::Constant { lambda_0: 0.0 },
            ..base.clone()
        };
        let a = distill_gm(&task, &base, 9).unwrap();
        let b = distill_gm(&task, &zero, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, distill_gm(&task, &base, 9).unwrap());
        assert_ne!(a.synthetic, distill_gm(&task, &base, 10).unwrap().synthetic);
    }
}
