use anyhow::Result;
use dsl_core::difficulty::{build_ensemble, correlation_report};
use dsl_core::report::difficulty_csv;
use dsl_core::rng::{derive_seed, tag};

use super::{Ctx, Status};
use crate::config::{DifficultyConfig, ScoredSplit};

pub fn run(ctx: &mut Ctx, config: &DifficultyConfig) -> Result<Status> {
    let task = config.task.build(derive_seed(config.seed, &[tag::DATASET]))?;
    let ensemble = build_ensemble(&task.train, &config.ensemble, config.seed, ctx.exec)?;
    let set = match config.score {
        ScoredSplit::Train => &task.train,
        ScoredSplit::Test => &task.test,
    };
    let report = correlation_report(set, &ensemble, ctx.exec)?;
    ctx.table("difficulty", &difficulty_csv(&report)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["statistic", "value"])?;
    let stats = [
        ("pearson_chi_gradn", report.pearson_chi_gradn),
        ("spearman_chi_gradn", report.spearman_chi_gradn),
        ("pearson_chi_loss", report.pearson_chi_loss),
        ("spearman_chi_loss", report.spearman_chi_loss),
    ];
    for (name, v) in stats {
        match v {
            Some(v) => log::info!("{name} = {v:.4}"),
            None => log::warn!("{name} undefined (constant scores)"),
        }
        w.write_record([name.to_string(), v.map(|x| format!("{x:?}")).unwrap_or_default()])?;
    }
    w.write_record(["members".to_string(), report.members.to_string()])?;
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    ctx.table("correlation", &bytes)?;
    Ok(Status::Complete)
}
