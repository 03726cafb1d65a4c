//! Output tables, manifests and the theory/simulation comparison.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so the
//! same values always produce the same bytes. Files are written to a
//! temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::difficulty::DifficultyReport;
use crate::distill::DistillTrace;
use crate::error::{Error, Result};
use crate::sim::SimResult;
use crate::theory::SweepRow;

pub const THEORY_HEADER: [&str; 10] =
    ["alpha_syn", "f", "gamma_deg", "strategy", "R", "rho", "kappa", "epsilon", "residual", "converged"];
pub const TRIAL_HEADER: [&str; 11] = [
    "trial",
    "d",
    "alpha_tot",
    "f",
    "gamma_deg",
    "strategy",
    "R",
    "kappa",
    "epsilon_analytic",
    "epsilon_empirical",
    "seed",
];
pub const SUMMARY_HEADER: [&str; 10] = [
    "alpha_syn",
    "f",
    "gamma_deg",
    "strategy",
    "d",
    "trials",
    "mean_epsilon",
    "std_error",
    "mean_epsilon_empirical",
    "std_error_empirical",
];
pub const TRACE_HEADER: [&str; 6] = ["step", "lambda", "matching_loss", "reg_value", "grad_norm_syn", "test_accuracy"];
pub const DIFFICULTY_HEADER: [&str; 4] = ["index", "chi", "gradn", "mean_loss"];
pub const COMPARE_HEADER: [&str; 10] = [
    "alpha_syn",
    "f",
    "gamma_deg",
    "strategy",
    "epsilon_theory",
    "epsilon_sim",
    "std_error",
    "delta",
    "z",
    "status",
];

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn theory_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    to_csv(
        &THEORY_HEADER,
        rows.iter().map(|r| {
            let c = &r.cell;
            let mut v = vec![num(c.alpha_syn), num(c.f), num(c.gamma_probe.to_degrees()), c.kind.to_string()];
            match &r.point {
                Some(p) => v.extend([num(p.r), num(p.rho), num(p.kappa), num(p.epsilon), num(p.residual), "true".into()]),
                None => v.extend(["", "", "", "", ""].map(String::from).into_iter().chain(["false".into()])),
            }
            v
        }),
    )
}

pub fn trials_csv(results: &[SimResult]) -> Result<Vec<u8>> {
    to_csv(
        &TRIAL_HEADER,
        results.iter().flat_map(|res| {
            let c = &res.config;
            res.per_trial.iter().map(move |t| {
                vec![
                    t.trial.to_string(),
                    c.d.to_string(),
                    num(c.alpha_tot),
                    num(c.f),
                    num(t.gamma_achieved.to_degrees()),
                    c.kind.to_string(),
                    num(t.r),
                    num(t.kappa),
                    num(t.epsilon_analytic),
                    opt(t.epsilon_empirical),
                    t.seed.to_string(),
                ]
            })
        }),
    )
}

pub fn summary_csv(results: &[SimResult]) -> Result<Vec<u8>> {
    to_csv(
        &SUMMARY_HEADER,
        results.iter().map(|res| {
            let c = &res.config;
            vec![
                num(c.alpha_syn()),
                num(c.f),
                num(c.gamma_probe.to_degrees()),
                c.kind.to_string(),
                c.d.to_string(),
                c.trials.to_string(),
                num(res.mean_epsilon),
                opt(res.std_error),
                opt(res.mean_epsilon_empirical),
                opt(res.std_error_empirical),
            ]
        }),
    )
}

pub fn trace_csv(trace: &DistillTrace) -> Result<Vec<u8>> {
    to_csv(
        &TRACE_HEADER,
        trace.records.iter().map(|r| {
            vec![
                r.step.to_string(),
                num(r.lambda),
                num(r.matching_loss),
                num(r.reg_value),
                num(r.grad_norm_syn),
                opt(r.test_accuracy),
            ]
        }),
    )
}

pub fn difficulty_csv(report: &DifficultyReport) -> Result<Vec<u8>> {
    to_csv(
        &DIFFICULTY_HEADER,
        report.rows.iter().map(|r| vec![r.index.to_string(), num(r.chi), num(r.gradn), num(r.mean_loss)]),
    )
}

/// Re-encodes a CSV table as a JSON array of row objects. Cells that parse
/// as numbers or booleans keep that type; empty cells become `null`.
pub fn csv_to_json(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let obj: serde_json::Map<String, serde_json::Value> = header
            .iter()
            .zip(rec.iter())
            .map(|(h, v)| {
                let value = if v.is_empty() {
                    serde_json::Value::Null
                } else if let Ok(b) = v.parse::<bool>() {
                    b.into()
                } else if let Ok(i) = v.parse::<i64>() {
                    i.into()
                } else if let Some(x) = v.parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
                    x.into()
                } else {
                    v.into()
                };
                (h.to_string(), value)
            })
            .collect();
        rows.push(serde_json::Value::Object(obj));
    }
    let mut out = serde_json::to_vec_pretty(&rows)?;
    out.push(b'\n');
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let name = path.file_name().ok_or_else(|| Error::Precondition(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputEntry>,
    pub wall_time_seconds: f64,
}

/// Collects the files of one run and writes them with a manifest.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    outputs: Vec<OutputEntry>,
}

impl RunWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, outputs: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` (relative to the run directory) and records it.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.push(OutputEntry { path: name.into(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn finish(
        self,
        tool_version: &str,
        command: &str,
        master_seed: u64,
        config: serde_json::Value,
        wall_time_seconds: f64,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            tool_version: tool_version.into(),
            command: command.into(),
            master_seed,
            config,
            outputs: self.outputs,
            wall_time_seconds,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join("manifest.json"), &bytes)?;
        Ok(manifest)
    }
}

/// Re-hashes every output listed in a manifest; returns the paths that
/// are missing or do not match.
pub fn verify_manifest(dir: &Path, manifest: &RunManifest) -> Vec<String> {
    manifest
        .outputs
        .iter()
        .filter(|o| match fs::read(dir.join(&o.path)) {
            Ok(b) => b.len() as u64 != o.bytes || sha256_hex(&b) != o.sha256,
            Err(_) => true,
        })
        .map(|o| o.path.clone())
        .collect()
}

#[derive(Debug, Deserialize)]
struct TheoryCsvRow {
    alpha_syn: f64,
    f: f64,
    gamma_deg: f64,
    strategy: String,
    epsilon: Option<f64>,
    converged: bool,
}

#[derive(Debug, Deserialize)]
struct SummaryCsvRow {
    alpha_syn: f64,
    f: f64,
    gamma_deg: f64,
    strategy: String,
    mean_epsilon: f64,
    std_error: Option<f64>,
}

/// Join key: grid coordinates rounded to 6 decimals.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridKey {
    pub alpha_syn: String,
    pub f: String,
    pub gamma_deg: String,
    pub strategy: String,
}

impl GridKey {
    fn new(alpha_syn: f64, f: f64, gamma_deg: f64, strategy: &str) -> Self {
        let r = |x: f64| format!("{:.6}", x + 0.0);
        Self { alpha_syn: r(alpha_syn), f: r(f), gamma_deg: r(gamma_deg), strategy: strategy.into() }
    }
}

impl std::fmt::Display for GridKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "alpha_syn={} f={} gamma={} {}", self.alpha_syn, self.f, self.gamma_deg, self.strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub key: GridKey,
    pub epsilon_theory: f64,
    pub epsilon_sim: f64,
    pub std_error: f64,
    pub delta: f64,
    /// `None` when the standard error is zero.
    pub z: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub unmatched: Vec<GridKey>,
    pub sigmas: f64,
}

impl Comparison {
    pub fn pass_fraction(&self) -> f64 {
        self.rows.iter().filter(|r| r.pass).count() as f64 / self.rows.len() as f64
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn max_abs_delta(&self) -> f64 {
        self.rows.iter().map(|r| r.delta.abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        to_csv(
            &COMPARE_HEADER,
            self.rows.iter().map(|r| {
                vec![
                    r.key.alpha_syn.clone(),
                    r.key.f.clone(),
                    r.key.gamma_deg.clone(),
                    r.key.strategy.clone(),
                    num(r.epsilon_theory),
                    num(r.epsilon_sim),
                    num(r.std_error),
                    num(r.delta),
                    opt(r.z),
                    if r.pass { "PASS" } else { "FAIL" }.into(),
                ]
            }),
        )
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Parse(format!("{what} row {}: {e}", i + 1))))
        .collect()
}

/// Joins a theory table with a simulation summary (a theory table is also
/// accepted as the second input, with zero standard error). A point
/// passes when `|Δε| ≤ sigmas · stderr`.
pub fn compare(theory_csv: &[u8], sim_csv: &[u8], sigmas: f64) -> Result<Comparison> {
    let theory: Vec<TheoryCsvRow> = read_rows(theory_csv, "theory")?;
    let header = csv::Reader::from_reader(sim_csv).headers()?.clone();
    let sim: Vec<(GridKey, f64, f64)> = if header.iter().any(|h| h == "mean_epsilon") {
        read_rows::<SummaryCsvRow>(sim_csv, "simulation")?
            .into_iter()
            .map(|r| (GridKey::new(r.alpha_syn, r.f, r.gamma_deg, &r.strategy), r.mean_epsilon, r.std_error.unwrap_or(0.0)))
            .collect()
    } else {
        read_rows::<TheoryCsvRow>(sim_csv, "simulation")?
            .into_iter()
            .filter_map(|r| Some((GridKey::new(r.alpha_syn, r.f, r.gamma_deg, &r.strategy), r.epsilon?, 0.0)))
            .collect()
    };
    let mut sim_map = BTreeMap::new();
    for (k, e, s) in sim {
        sim_map.insert(k, (e, s));
    }
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    for t in theory {
        let key = GridKey::new(t.alpha_syn, t.f, t.gamma_deg, &t.strategy);
        match (t.converged, t.epsilon, sim_map.get(&key)) {
            (true, Some(eps_t), Some(&(eps_s, se))) => {
                used.insert(key.clone());
                let delta = eps_s - eps_t;
                rows.push(CompareRow {
                    z: (se > 0.0).then(|| delta / se),
                    pass: delta.abs() <= sigmas * se,
                    key,
                    epsilon_theory: eps_t,
                    epsilon_sim: eps_s,
                    std_error: se,
                    delta,
                });
            }
            _ => unmatched.push(key),
        }
    }
    unmatched.extend(sim_map.keys().filter(|k| !used.contains(*k)).cloned());
    for k in &unmatched {
        log::warn!("no match for {k}; excluded");
    }
    if rows.is_empty() {
        return Err(Error::EmptyBatch("no grid point appears in both inputs".into()));
    }
    Ok(Comparison { rows, unmatched, sigmas })
}
