use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    cutoffs_from_fraction, solve_imperfect, solve_perfect, MarginConvention, StrategyKind, TheoryPoint,
};
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha_syn: f64,
    pub f: f64,
    /// Radians.
    pub gamma_probe: f64,
    pub kind: StrategyKind,
    #[serde(default)]
    pub convention: MarginConvention,
}

impl GridCell {
    pub fn new(alpha_syn: f64, f: f64, gamma_probe: f64, kind: StrategyKind) -> Self {
        Self {
            alpha_syn,
            f,
            gamma_probe,
            kind,
            convention: MarginConvention::Signed,
        }
    }

    fn line_key(&self) -> (u64, u64, StrategyKind, MarginConvention) {
        (self.f.to_bits(), self.gamma_probe.to_bits(), self.kind, self.convention)
    }

    pub fn solve(&self, tol: f64, warm: Option<[f64; 3]>) -> Result<TheoryPoint> {
        let strategy = cutoffs_from_fraction(self.f, self.gamma_probe, self.kind, self.convention)?;
        if self.gamma_probe == 0.0 {
            solve_perfect(self.alpha_syn, &strategy, tol, warm.map(|w| (w[0], w[2])))
        } else {
            solve_imperfect(self.alpha_syn, &strategy, tol, warm)
        }
    }
}

/// One output row: the solved point, or the error that prevented it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: GridCell,
    pub point: Option<TheoryPoint>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn converged(&self) -> bool {
        self.point.is_some()
    }
}

/// Solves every grid cell.
///
/// Cells sharing `(f, γ, strategy, convention)` form a line that is solved
/// in increasing `alpha_syn`, each cell warm-started from the last solved
/// one. Lines run under `exec`; rows come back in grid order and failed
/// cells carry their error message.
pub fn sweep(grid: &[GridCell], tol: f64, exec: Exec) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Precondition("sweep grid is empty".into()));
    }
    let mut lines: BTreeMap<_, (GridCell, Vec<f64>)> = BTreeMap::new();
    for c in grid {
        lines.entry(c.line_key()).or_insert_with(|| (*c, Vec::new())).1.push(c.alpha_syn);
    }
    let lines: Vec<(GridCell, Vec<f64>)> = lines
        .into_values()
        .map(|(proto, mut alphas)| {
            alphas.sort_by(f64::total_cmp);
            alphas.dedup_by(|a, b| a.to_bits() == b.to_bits());
            (proto, alphas)
        })
        .collect();

    let solved: Vec<Vec<(u64, std::result::Result<TheoryPoint, String>)>> = exec.map(&lines, |(proto, alphas)| {
        let mut warm = None;
        alphas
            .iter()
            .map(|&a| {
                let cell = GridCell { alpha_syn: a, ..*proto };
                let out = cell.solve(tol, warm);
                if let Ok(p) = &out {
                    warm = Some([p.r, p.rho, p.kappa]);
                } else if let Err(e) = &out {
                    log::warn!("cell {cell:?} failed: {e}");
                }
                (a.to_bits(), out.map_err(|e| e.to_string()))
            })
            .collect()
    });

    let mut table = BTreeMap::new();
    for ((proto, _), results) in lines.iter().zip(solved) {
        for (a, out) in results {
            table.insert((proto.line_key(), a), out);
        }
    }
    Ok(grid
        .iter()
        .map(|c| {
            let out = &table[&(c.line_key(), c.alpha_syn.to_bits())];
            SweepRow {
                cell: *c,
                point: out.as_ref().ok().cloned(),
                error: out.as_ref().err().cloned(),
            }
        })
        .collect())
}
