use dsl_core::distill::{
    build_expert_bank, distill_gm, distill_tm, gm_sdc_loss, tm_sdc_loss, toy_blobs, xor_blobs, BankConfig, Dataset,
    LambdaSchedule, MatchConfig, Metric, SyntheticSet, ToyModel, TrajectoryBank,
};
use dsl_core::math::linalg::norm;
use dsl_core::rng::Rng;
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

const H: f64 = 1e-5;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut p = x.to_vec();
            p[k] += H;
            let up = f(&p);
            p[k] -= 2.0 * H;
            (up - f(&p)) / (2.0 * H)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gm_feature_gradient_is_exact(
        seed in any::<u64>(),
        d in 2usize..=10,
        c in 2usize..=3,
        n_syn in 1usize..=5,
        lambda in 0.0f64..1.0,
        exponent in 1u32..=2,
        l2 in any::<bool>(),
    ) {
        let mut rng = Rng::seed_from_u64(seed);
        let class = rng.random_range(0..c);
        let metric = if l2 { Metric::L2 } else { Metric::CosineGroupwise };
        let real = Dataset::new(gaussian(&mut rng, 8 * d), vec![class; 8], d, c).unwrap();
        let syn = Dataset::new(gaussian(&mut rng, n_syn * d), vec![class; n_syn], d, c).unwrap();
        let model = ToyModel::random(c, d, 2.0, seed ^ 1);
        let out = gm_sdc_loss(&model, &real, &syn, lambda, exponent, metric).unwrap();
        let fd = central_diff(&syn.features, |x| {
            let s = Dataset { features: x.to_vec(), ..syn.clone() };
            gm_sdc_loss(&model, &real, &s, lambda, exponent, metric).unwrap().loss
        });
        prop_assert!(rel_err(&out.grad_syn, &fd) < 1e-4, "{}", rel_err(&out.grad_syn, &fd));
    }

    #[test]
    fn tm_feature_gradient_is_exact(
        seed in any::<u64>(),
        d in 2usize..=10,
        c in 2usize..=3,
        ipc in 1usize..=2,
        n in 0usize..=5,
        lambda in 0.0f64..1.0,
        exponent in 1u32..=2,
        along in any::<bool>(),
    ) {
        let mut rng = Rng::seed_from_u64(seed);
        let checkpoints = (0..3).map(|_| gaussian(&mut rng, c * d)).collect();
        let bank = TrajectoryBank { checkpoints, classes: c, d, config: BankConfig::default() };
        let syn = SyntheticSet { features: gaussian(&mut rng, c * ipc * d), ipc, classes: c, d };
        let config = MatchConfig {
            student_steps: n,
            expert_epochs: 2,
            eta_model: 0.3,
            reg_exponent: exponent,
            reg_along_trajectory: along,
            ..Default::default()
        };
        let out = tm_sdc_loss(&bank, 0, &syn, &config, Some(lambda)).unwrap();
        let fd = central_diff(&syn.features, |x| {
            let s = SyntheticSet { features: x.to_vec(), ..syn.clone() };
            tm_sdc_loss(&bank, 0, &s, &config, Some(lambda)).unwrap().loss
        });
        prop_assert!(rel_err(&out.grad_syn, &fd) < 1e-4, "{}", rel_err(&out.grad_syn, &fd));
    }
}

#[test]
fn xor_task_distils_without_error() {
    let task = xor_blobs(60, 30, 2.0, 3).unwrap();
    let config = MatchConfig { iterations: 10, outer_steps: 3, batch_real: 16, ipc: 2, ..Default::default() };
    let out = distill_gm(&task, &config, 1).unwrap();
    assert_eq!(out.synthetic.len(), 8);
    assert!(out.trace.records.iter().all(|r| r.grad_norm_syn.is_finite()));
    assert_eq!(out.trace.grad_norm_ema.len(), 10);
}

#[test]
fn adaptive_schedule_is_recorded_in_the_trace() {
    let task = toy_blobs(60, 30, 4, 2.0, 3).unwrap();
    let bank = build_expert_bank(&task.train, &BankConfig { checkpoints: 10, batch: 16, ..Default::default() }, 2).unwrap();
    let lambda = LambdaSchedule::Logarithmic { lambda_0: 0.02, lambda_end: 0.08, total_steps: 10 };
    let config = MatchConfig { iterations: 11, lambda, ..Default::default() };
    let out = distill_tm(&task, &bank, &config, 4).unwrap();
    let l: Vec<f64> = out.trace.records.iter().map(|r| r.lambda).collect();
    assert_eq!(l[0], 0.02);
    assert_eq!(l[10], 0.08);
    assert!(l.windows(2).all(|w| w[1] > w[0] || w[1] == 0.08));
}
