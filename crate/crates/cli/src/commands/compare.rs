use std::path::Path;

use anyhow::{Context, Result};
use dsl_core::report::compare;

use super::{Ctx, Status};

pub fn run(ctx: &mut Ctx, theory: &Path, sim: &Path, sigmas: f64, min_pass_fraction: f64) -> Result<Status> {
    let read = |p: &Path| std::fs::read(p).with_context(|| format!("reading {}", p.display()));
    let c = compare(&read(theory)?, &read(sim)?, sigmas).map_err(|e| crate::UsageError(e.to_string()))?;
    ctx.table("compare", &c.to_csv()?)?;
    for r in c.rows.iter().filter(|r| !r.pass) {
        log::warn!("FAIL {}: delta {:+.4}, std error {:.4}", r.key, r.delta, r.std_error);
    }
    let frac = c.pass_fraction();
    log::info!(
        "{} of {} points within {sigmas} standard errors; max |delta| {:.4}",
        c.rows.iter().filter(|r| r.pass).count(),
        c.rows.len(),
        c.max_abs_delta()
    );
    Ok(if frac >= min_pass_fraction {
        Status::Complete
    } else {
        Status::Incomplete(format!("pass fraction {frac:.3} below {min_pass_fraction}"))
    })
}
