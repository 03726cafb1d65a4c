//! TOML run configurations. Every table rejects unknown keys and every
//! field has a default, so an empty file is a valid config.

use std::path::Path;

use anyhow::Context;
use dsl_core::difficulty::EnsembleConfig;
use dsl_core::distill::{BankConfig, MatchConfig};
use dsl_core::sim::ProbeMode;
use dsl_core::theory::{GridCell, MarginConvention, StrategyKind, DEFAULT_TOL};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub alpha_syn: Vec<f64>,
    pub f: Vec<f64>,
    pub gamma_deg: Vec<f64>,
    pub strategies: Vec<StrategyKind>,
    pub convention: MarginConvention,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            alpha_syn: vec![0.5, 1.0, 2.0, 4.0],
            f: vec![0.3, 0.6, 1.0],
            gamma_deg: vec![0.0],
            strategies: vec![StrategyKind::KeepHardest, StrategyKind::KeepEasiest],
            convention: MarginConvention::Signed,
        }
    }
}

impl GridSpec {
    /// Cells in (γ, f, strategy, α) order, so each sweep line is contiguous.
    pub fn cells(&self) -> Result<Vec<GridCell>, UsageError> {
        if [self.alpha_syn.len(), self.f.len(), self.gamma_deg.len(), self.strategies.len()].contains(&0) {
            return Err(UsageError("grid: every axis needs at least one value".into()));
        }
        if let Some(g) = self.gamma_deg.iter().find(|g| !(0.0..=90.0).contains(*g)) {
            return Err(UsageError(format!("grid.gamma_deg: {g} is outside [0, 90]")));
        }
        let mut out = Vec::new();
        for &g in &self.gamma_deg {
            for &f in &self.f {
                for &kind in &self.strategies {
                    for &a in &self.alpha_syn {
                        out.push(GridCell { convention: self.convention, ..GridCell::new(a, f, g.to_radians(), kind) });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub tol: f64,
    pub grid: GridSpec,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, grid: GridSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub d: usize,
    pub trials: usize,
    pub probe_mode: ProbeMode,
    /// Also report the error measured on `20 d` fresh samples.
    pub holdout: bool,
    /// Relative tolerance of the max-margin solver.
    pub tol: f64,
    pub grid: GridSpec,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 200,
            trials: 100,
            probe_mode: ProbeMode::ConditionedGaussian,
            holdout: true,
            tol: 1e-8,
            grid: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Two Gaussian blobs; counts are per class.
    Blobs { n_train: usize, n_test: usize, d: usize, separation: f64 },
    /// Four-class XOR in 16 dimensions; counts are per class.
    Xor { n_train: usize, n_test: usize, spread: f64 },
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::Blobs { n_train: 200, n_test: 500, d: 16, separation: 2.0 }
    }
}

impl TaskSpec {
    pub fn build(&self, seed: u64) -> dsl_core::Result<dsl_core::distill::ToyTask> {
        match *self {
            TaskSpec::Blobs { n_train, n_test, d, separation } => {
                dsl_core::distill::toy_blobs(n_train, n_test, d, separation, seed)
            }
            TaskSpec::Xor { n_train, n_test, spread } => dsl_core::distill::xor_blobs(n_train, n_test, spread, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillMode {
    Gm,
    Tm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub seed: u64,
    pub mode: DistillMode,
    /// Replicates; each runs a baseline and an SDC distillation.
    pub seeds: Vec<u64>,
    /// Pick `eta_syn` per replicate from the baseline's test accuracy.
    pub tune_eta_syn: bool,
    pub task: TaskSpec,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    /// Expert trajectories for trajectory matching.
    pub bank: BankConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: DistillMode::Gm,
            seeds: (0..10).collect(),
            tune_eta_syn: false,
            task: TaskSpec::default(),
            matching: MatchConfig::default(),
            bank: BankConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoredSplit {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifficultyConfig {
    pub seed: u64,
    /// Which split is scored; members always train on the training split.
    pub score: ScoredSplit,
    pub task: TaskSpec,
    pub ensemble: EnsembleConfig,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        Self { seed: 0, score: ScoredSplit::Test, task: TaskSpec::default(), ensemble: EnsembleConfig::default() }
    }
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip<T: Serialize + DeserializeOwned + Default + PartialEq + std::fmt::Debug>() {
        let text = toml::to_string_pretty(&T::default()).unwrap();
        let back: T = toml::from_str(&text).unwrap();
        assert_eq!(back, T::default(), "{text}");
        assert_eq!(toml::from_str::<T>("").unwrap(), T::default());
    }

    #[test]
    fn defaults_roundtrip() {
        roundtrip::<TheoryConfig>();
        roundtrip::<SimulateConfig>();
        roundtrip::<DistillConfig>();
        roundtrip::<DifficultyConfig>();
    }

    #[test]
    fn unknown_keys_are_reported_with_position() {
        let err = toml::from_str::<SimulateConfig>("trials = 3\n[grid]\nalpha = [1.0]\n").unwrap_err().to_string();
        assert!(err.contains("alpha") && err.contains("line 3"), "{err}");
    }

    #[test]
    fn grid_order_and_degrees() {
        let g = GridSpec { alpha_syn: vec![1.0, 2.0], f: vec![0.6], gamma_deg: vec![10.0], ..GridSpec::default() };
        let cells = g.cells().unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].kind, StrategyKind::KeepHardest);
        assert_eq!(cells[1].alpha_syn, 2.0);
        assert!((cells[0].gamma_probe - 10f64.to_radians()).abs() < 1e-15);
        assert!(GridSpec { gamma_deg: vec![120.0], ..g.clone() }.cells().is_err());
        assert!(GridSpec { f: vec![], ..g }.cells().is_err());
    }
}
