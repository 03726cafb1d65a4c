use std::path::Path;
use std::process::{Command, Output};

use dsl_core::report::{verify_manifest, RunManifest};

fn dsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsl")).args(args).env("DSL_LOG", "warn").output().expect("run dsl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn one_cell_theory_grid_gives_one_row_and_a_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(&cfg, "[grid]\nalpha_syn = [2.0]\nf = [0.6]\nstrategies = [\"keep-easiest\"]\n").unwrap();
    let out = dir.path().join("out");
    let o = dsl(&["theory", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&out.join("theory.csv"));
    assert_eq!(r.len(), 1);
    assert_eq!(&r[0][3], "keep-easiest");
    assert_eq!(&r[0][9], "true");
    let m = manifest(&out);
    assert_eq!(m.command.split_whitespace().nth(1), Some("theory"));
    assert!(verify_manifest(&out, &m).is_empty());
    assert_eq!(m.config["grid"]["alpha_syn"][0], 2.0);
}

#[test]
fn single_trial_simulation_writes_one_trial_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, "d = 20\ntrials = 1\n[grid]\nalpha_syn = [1.0]\nf = [1.0]\nstrategies = [\"keep-random\"]\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&dsl(&["simulate", "--config", p(&cfg), "--out", p(&out), "--seed", "4"])), 0);
    assert_eq!(rows(&out.join("trials.csv")).len(), 1);
    let summary = rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), 1);
    assert_eq!(&summary[0][7], "", "no standard error from one trial");
    assert_eq!(manifest(&out).master_seed, 4);
}

#[test]
fn compare_flags_an_injected_outlier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(&cfg, "[grid]\nalpha_syn = [1.0, 2.0]\nf = [0.6]\nstrategies = [\"keep-hardest\"]\n").unwrap();
    let th = dir.path().join("th");
    assert_eq!(code(&dsl(&["theory", "--config", p(&cfg), "--out", p(&th)])), 0);
    let theory = th.join("theory.csv");

    let same = dir.path().join("same");
    assert_eq!(code(&dsl(&["compare", p(&theory), p(&theory), "--out", p(&same)])), 0);
    assert!(rows(&same.join("compare.csv")).iter().all(|r| &r[7] == "0.0" && &r[9] == "PASS"));

    let text = std::fs::read_to_string(&theory).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[2].split(',').map(String::from).collect();
    cells[7] = (cells[7].parse::<f64>().unwrap() + 0.2).to_string();
    lines[2] = cells.join(",");
    let shifted = dir.path().join("shifted.csv");
    std::fs::write(&shifted, lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("cmp");
    assert_eq!(code(&dsl(&["compare", p(&theory), p(&shifted), "--out", p(&out)])), 1);
    let status: Vec<String> = rows(&out.join("compare.csv")).iter().map(|r| r[9].to_string()).collect();
    assert_eq!(status, ["PASS", "FAIL"]);
    assert_eq!(code(&dsl(&["compare", p(&theory), p(&shifted), "--out", p(&out), "--allow-partial"])), 0);
}

#[test]
fn compare_with_no_common_keys_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "alpha_syn,f,gamma_deg,strategy,R,rho,kappa,epsilon,residual,converged\n1.0,0.6,0.0,keep-hardest,0.5,0.5,0.6,0.3,0.0,true\n").unwrap();
    std::fs::write(&b, "alpha_syn,f,gamma_deg,strategy,d,trials,mean_epsilon,std_error,mean_epsilon_empirical,std_error_empirical\n4.0,0.6,0.0,keep-hardest,200,100,0.07,0.001,,\n").unwrap();
    let o = dsl(&["compare", p(&a), p(&b), "--out", p(&dir.path().join("c"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no grid point"));
}

#[test]
fn malformed_config_is_a_usage_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "trials = 3\n[grid]\nalphas = [1.0]\n").unwrap();
    let o = dsl(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("alphas") && err.contains("line 3"), "{err}");
    assert_eq!(code(&dsl(&["simulate", "--jobs", "many"])), 2);
}

#[test]
fn print_defaults_round_trips_as_a_config() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["theory", "simulate", "distill", "difficulty"] {
        let o = dsl(&[cmd, "--print-defaults"]);
        assert_eq!(code(&o), 0);
        let cfg = dir.path().join(format!("{cmd}.toml"));
        std::fs::write(&cfg, &o.stdout).unwrap();
        let again = dsl(&[cmd, "--print-defaults", "--config", p(&cfg)]);
        assert_eq!(again.stdout, o.stdout);
    }
}

#[test]
fn zero_lambda_distillation_has_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d.toml");
    std::fs::write(&cfg, "seeds = [7]\n[match]\niterations = 20\n[match.lambda]\nkind = \"constant\"\nlambda_0 = 0.0\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&dsl(&["distill", "--config", p(&cfg), "--out", p(&out)])), 0);
    let r = rows(&out.join("summary.csv"));
    assert_eq!(r.len(), 2);
    for row in &r {
        assert_eq!(&row[5], "0.0");
        assert_eq!(&row[8], "0.0");
    }
    assert!(out.join("synthetic/seed7-sdc.json").exists());
    assert!(out.join("traces/seed7-baseline.csv").exists());
}

#[test]
fn failing_replicate_is_recorded_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d.toml");
    // 30 samples per class cannot fill a real batch of 64
    std::fs::write(
        &cfg,
        "seeds = [1]\n[task]\nkind = \"blobs\"\nn_train = 30\nn_test = 10\nd = 4\nseparation = 2.0\n[match]\niterations = 5\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&dsl(&["distill", "--config", p(&cfg), "--out", p(&out)])), 1);
    let r = rows(&out.join("summary.csv"));
    assert_eq!(r.len(), 1);
    assert!(r[0][1].contains("batch_real"));
}

#[test]
fn json_format_writes_json_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[ensemble]\nmembers = 3\n").unwrap();
    assert_eq!(code(&dsl(&["difficulty", "--config", p(&cfg), "--out", p(&out), "--format", "json"])), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("correlation.json")).unwrap()).unwrap();
    assert_eq!(v[4]["statistic"], "members");
    assert_eq!(v[4]["value"], 3);
    assert!(!out.join("difficulty.csv").exists());
    assert_eq!(manifest(&out).outputs.len(), 2);
}
