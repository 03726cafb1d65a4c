use anyhow::Result;
use dsl_core::distill::{
    build_expert_bank, distill_gm, distill_tm, tune_eta_syn, DistillOutcome, MatchConfig, MatchMode,
};
use dsl_core::report::trace_csv;
use dsl_core::rng::{derive_seed, tag};
use dsl_core::Exec;
use serde::Serialize;

use super::{Ctx, Status};
use crate::config::{DistillConfig, DistillMode};

struct Replicate {
    eta_syn: f64,
    baseline: DistillOutcome,
    sdc: DistillOutcome,
}

#[derive(Serialize)]
struct SyntheticFile<'a> {
    tool_version: &'a str,
    mode: DistillMode,
    master_seed: u64,
    replicate: u64,
    variant: &'a str,
    eta_syn: f64,
    synthetic: &'a dsl_core::distill::SyntheticSet,
}

fn replicate(config: &DistillConfig, run_seed: u64) -> dsl_core::Result<Replicate> {
    let task = config.task.build(derive_seed(run_seed, &[tag::DATASET]))?;
    let bank = match config.mode {
        DistillMode::Gm => None,
        DistillMode::Tm => Some(build_expert_bank(&task.train, &config.bank, derive_seed(run_seed, &[tag::BANK]))?),
    };
    let mode = match config.mode {
        DistillMode::Gm => MatchMode::Gradient,
        DistillMode::Tm => MatchMode::Trajectory,
    };
    let eta_syn = if config.tune_eta_syn {
        tune_eta_syn(&task, bank.as_ref(), &config.matching, mode, run_seed, Exec::Sequential)?.0
    } else {
        config.matching.eta_syn
    };
    let run = |c: &MatchConfig| match &bank {
        None => distill_gm(&task, c, run_seed),
        Some(b) => distill_tm(&task, b, c, run_seed),
    };
    let sdc_config = MatchConfig { eta_syn, ..config.matching.clone() };
    let baseline = run(&MatchConfig { baseline: true, ..sdc_config.clone() })?;
    let sdc = run(&sdc_config)?;
    Ok(Replicate { eta_syn, baseline, sdc })
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn run(ctx: &mut Ctx, config: &DistillConfig) -> Result<Status> {
    config.matching.validate().map_err(|e| crate::UsageError(format!("[match]: {e}")))?;
    if config.seeds.is_empty() {
        return Err(crate::UsageError("seeds: need at least one replicate".into()).into());
    }
    let outcomes = ctx.exec.map(&config.seeds, |&s| replicate(config, derive_seed(config.seed, &[s])));

    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record([
        "seed",
        "status",
        "eta_syn",
        "grad_norm_baseline",
        "grad_norm_sdc",
        "grad_norm_delta",
        "accuracy_baseline",
        "accuracy_sdc",
        "accuracy_delta",
    ])?;
    let mut paired = Vec::new();
    let mut failed = 0;
    for (&s, outcome) in config.seeds.iter().zip(&outcomes) {
        let rep = match outcome {
            Ok(r) => r,
            Err(e) => {
                log::warn!("seed {s}: {e}");
                failed += 1;
                summary.write_record([s.to_string(), e.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new()])?;
                continue;
            }
        };
        for (variant, out) in [("baseline", &rep.baseline), ("sdc", &rep.sdc)] {
            ctx.table(&format!("traces/seed{s}-{variant}"), &trace_csv(&out.trace)?)?;
            ctx.writer.write_json(
                &format!("synthetic/seed{s}-{variant}.json"),
                &SyntheticFile {
                    tool_version: env!("CARGO_PKG_VERSION"),
                    mode: config.mode,
                    master_seed: config.seed,
                    replicate: s,
                    variant,
                    eta_syn: rep.eta_syn,
                    synthetic: &out.synthetic,
                },
            )?;
        }
        let g = (rep.baseline.trace.late_grad_norm(), rep.sdc.trace.late_grad_norm());
        let a = (rep.baseline.trace.final_accuracy(), rep.sdc.trace.final_accuracy());
        let da = a.0.zip(a.1).map(|(b, s)| s - b);
        summary.write_record([
            s.to_string(),
            "ok".into(),
            num(rep.eta_syn),
            num(g.0),
            num(g.1),
            num(g.1 - g.0),
            opt(a.0),
            opt(a.1),
            opt(da),
        ])?;
        paired.push((g, a));
    }
    if !paired.is_empty() {
        let n = paired.len() as f64;
        let mean = |f: &dyn Fn(&((f64, f64), (Option<f64>, Option<f64>))) -> f64| paired.iter().map(f).sum::<f64>() / n;
        let gb = mean(&|p| p.0 .0);
        let gs = mean(&|p| p.0 .1);
        let ab = mean(&|p| p.1 .0.unwrap_or(f64::NAN));
        let acc_s = mean(&|p| p.1 .1.unwrap_or(f64::NAN));
        log::info!("paired mean: grad norm {gb:.5} -> {gs:.5}, accuracy {ab:.4} -> {acc_s:.4}");
        summary.write_record([
            "mean".into(),
            format!("{} ok", paired.len()),
            String::new(),
            num(gb),
            num(gs),
            num(mean(&|p| p.0 .1 - p.0 .0)),
            num(ab),
            num(acc_s),
            num(mean(&|p| p.1 .1.unwrap_or(f64::NAN) - p.1 .0.unwrap_or(f64::NAN))),
        ])?;
    }
    let bytes = summary.into_inner().map_err(|e| e.into_error())?;
    ctx.table("summary", &bytes)?;
    Ok(if failed == 0 {
        Status::Complete
    } else {
        Status::Incomplete(format!("{failed} of {} replicates failed", config.seeds.len()))
    })
}
