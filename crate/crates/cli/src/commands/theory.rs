use anyhow::Result;
use dsl_core::report::theory_csv;
use dsl_core::theory::sweep;

use super::{Ctx, Status};
use crate::config::TheoryConfig;

pub fn run(ctx: &mut Ctx, config: &TheoryConfig) -> Result<Status> {
    let cells = config.grid.cells()?;
    let rows = sweep(&cells, config.tol, ctx.exec)?;
    for r in rows.iter().filter(|r| !r.converged()) {
        log::warn!(
            "alpha_syn={} f={} gamma={:.3}° {}: {}",
            r.cell.alpha_syn,
            r.cell.f,
            r.cell.gamma_probe.to_degrees(),
            r.cell.kind,
            r.error.as_deref().unwrap_or("not converged")
        );
    }
    ctx.table("theory", &theory_csv(&rows)?)?;
    let failed = rows.iter().filter(|r| !r.converged()).count();
    Ok(if failed == 0 {
        Status::Complete
    } else {
        Status::Incomplete(format!("{failed} of {} grid cells did not converge", rows.len()))
    })
}
