//! Per-sample difficulty against an ensemble of independently trained toy
//! models: misclassification rate χ, mean gradient norm (GraDN) and mean
//! loss, with rank and linear correlations between them.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::distill::{Dataset, ToyModel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_seed, tag, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub epochs: usize,
    pub eta: f64,
    pub batch: usize,
    pub init_scale: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { members: 20, epochs: 2, eta: 0.05, batch: 16, init_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub models: Vec<ToyModel>,
    /// Seed of each member.
    pub seeds: Vec<u64>,
    pub config: EnsembleConfig,
}

impl Ensemble {
    pub fn from_models(models: Vec<ToyModel>) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::EmptyBatch("ensemble has no members".into()))?;
        if let Some(m) = models.iter().find(|m| (m.classes, m.d) != (first.classes, first.d)) {
            return Err(Error::DimensionMismatch { expected: first.classes * first.d, got: m.classes * m.d });
        }
        Ok(Self { seeds: Vec::new(), models, config: EnsembleConfig::default() })
    }

    fn check(&self, d: usize) -> Result<()> {
        match self.models.first() {
            None => Err(Error::EmptyBatch("ensemble has no members".into())),
            Some(m) if m.d != d => Err(Error::DimensionMismatch { expected: m.d, got: d }),
            _ => Ok(()),
        }
    }
}

/// Members differ only by seed: random initialisation and SGD order, for
/// a fixed epoch budget on the full training set. Members use raw features.
pub fn build_ensemble(train: &Dataset, config: &EnsembleConfig, seed: u64, exec: Exec) -> Result<Ensemble> {
    if config.members == 0 || config.epochs == 0 {
        return Err(Error::Precondition("ensemble needs at least one member and one epoch".into()));
    }
    let seeds: Vec<u64> = (0..config.members).map(|k| derive_seed(seed, &[tag::MEMBER, k as u64])).collect();
    let models = exec.map(&seeds, |&s| -> Result<ToyModel> {
        let mut m = ToyModel::random(train.classes, train.d, config.init_scale, derive_seed(s, &[tag::INIT])).raw();
        let mut rng = Rng::seed_from_u64(derive_seed(s, &[tag::BATCH]));
        for _ in 0..config.epochs {
            m.sgd_epoch(train, config.batch, config.eta, &mut rng)?;
        }
        Ok(m)
    });
    Ok(Ensemble { models: models.into_iter().collect::<Result<_>>()?, seeds, config: config.clone() })
}

fn single(x: &[f64], y: usize, classes: usize) -> Result<Dataset> {
    Dataset::new(x.to_vec(), vec![y], x.len(), classes)
}

/// Fraction of members that misclassify `(x, y)`.
pub fn sample_difficulty(x: &[f64], y: usize, ensemble: &Ensemble) -> Result<f64> {
    ensemble.check(x.len())?;
    let wrong = ensemble.models.iter().filter(|m| m.predict(x) != y).count();
    Ok(wrong as f64 / ensemble.models.len() as f64)
}

/// Mean over members of the per-sample loss-gradient norm.
pub fn gradn_score(x: &[f64], y: usize, ensemble: &Ensemble) -> Result<f64> {
    ensemble.check(x.len())?;
    let data = single(x, y, ensemble.models[0].classes)?;
    let mut total = 0.0;
    for m in &ensemble.models {
        total += m.per_sample_grad_norms(&data)?[0];
    }
    Ok(total / ensemble.models.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRow {
    pub index: usize,
    pub chi: f64,
    pub gradn: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyReport {
    pub rows: Vec<DifficultyRow>,
    /// `None` when either score is constant.
    pub pearson_chi_gradn: Option<f64>,
    pub spearman_chi_gradn: Option<f64>,
    pub pearson_chi_loss: Option<f64>,
    pub spearman_chi_loss: Option<f64>,
    pub members: usize,
    pub member_seeds: Vec<u64>,
}

pub fn correlation_report(set: &Dataset, ensemble: &Ensemble, exec: Exec) -> Result<DifficultyReport> {
    if set.len() < 3 {
        return Err(Error::Precondition(format!("need at least 3 samples, got {}", set.len())));
    }
    ensemble.check(set.d)?;
    let k = ensemble.models.len() as f64;
    let per_member = exec.map(&ensemble.models, |m| -> Result<(Vec<f64>, Vec<f64>, Vec<bool>)> {
        let wrong = (0..set.len()).map(|i| m.predict(set.row(i)) != set.labels[i]).collect();
        Ok((m.per_sample_grad_norms(set)?, m.per_sample_losses(set)?, wrong))
    });
    let mut rows: Vec<DifficultyRow> =
        (0..set.len()).map(|index| DifficultyRow { index, chi: 0.0, gradn: 0.0, mean_loss: 0.0 }).collect();
    for out in per_member {
        let (g, l, w) = out?;
        for (i, r) in rows.iter_mut().enumerate() {
            r.gradn += g[i] / k;
            r.mean_loss += l[i] / k;
            r.chi += f64::from(u8::from(w[i])) / k;
        }
    }
    let chi: Vec<f64> = rows.iter().map(|r| r.chi).collect();
    let gradn: Vec<f64> = rows.iter().map(|r| r.gradn).collect();
    let loss: Vec<f64> = rows.iter().map(|r| r.mean_loss).collect();
    let report = DifficultyReport {
        pearson_chi_gradn: pearson(&chi, &gradn),
        spearman_chi_gradn: spearman(&chi, &gradn),
        pearson_chi_loss: pearson(&chi, &loss),
        spearman_chi_loss: spearman(&chi, &loss),
        rows,
        members: ensemble.models.len(),
        member_seeds: ensemble.seeds.clone(),
    };
    if report.spearman_chi_gradn.is_none() {
        log::warn!("difficulty scores are constant; correlations undefined");
    }
    Ok(report)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks from 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// `out[0] = x[0]`, `out[t] = decay·out[t−1] + (1 − decay)·x[t]`.
pub fn ema_smooth(series: &[f64], decay: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::Domain(format!("EMA decay must lie in [0, 1), got {decay}")));
    }
    let (&first, rest) = series.split_first().ok_or_else(|| Error::EmptyBatch("empty series".into()))?;
    let mut out = Vec::with_capacity(series.len());
    out.push(first);
    for &x in rest {
        let prev = out[out.len() - 1];
        out.push(decay * prev + (1.0 - decay) * x);
    }
    Ok(out)
}
