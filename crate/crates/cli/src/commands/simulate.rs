use anyhow::Result;
use dsl_core::report::{summary_csv, trials_csv};
use dsl_core::sim::{run_experiment, SimConfig};

use super::{Ctx, Status};
use crate::config::SimulateConfig;

/// Every cell uses the same master seed, so cells that share `d` and
/// `α_tot` see the same experts and training sets.
pub fn run(ctx: &mut Ctx, config: &SimulateConfig) -> Result<Status> {
    let cells = config.grid.cells()?;
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for cell in &cells {
        let sc = SimConfig {
            probe_mode: config.probe_mode,
            convention: cell.convention,
            trials: config.trials,
            master_seed: config.seed,
            holdout: config.holdout,
            tol: config.tol,
            ..SimConfig::for_alpha_syn(config.d, cell.alpha_syn, cell.f, cell.gamma_probe, cell.kind)
        };
        match run_experiment(&sc, ctx.exec) {
            Ok(r) => {
                log::info!(
                    "alpha_syn={} f={} gamma={}° {}: epsilon {:.4} ± {:.4}",
                    cell.alpha_syn,
                    cell.f,
                    cell.gamma_probe.to_degrees(),
                    cell.kind,
                    r.mean_epsilon,
                    r.std_error.unwrap_or(0.0)
                );
                results.push(r);
            }
            Err(e) => {
                log::warn!("alpha_syn={} f={} {}: {e}", cell.alpha_syn, cell.f, cell.kind);
                failures.push(e);
            }
        }
    }
    ctx.table("trials", &trials_csv(&results)?)?;
    ctx.table("summary", &summary_csv(&results)?)?;
    Ok(if failures.is_empty() {
        Status::Complete
    } else {
        Status::Incomplete(format!("{} of {} grid cells failed", failures.len(), cells.len()))
    })
}
