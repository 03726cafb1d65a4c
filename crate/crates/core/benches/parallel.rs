use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsl_core::difficulty::{build_ensemble, EnsembleConfig};
use dsl_core::distill::toy_blobs;
use dsl_core::sim::{run_experiment, SimConfig};
use dsl_core::theory::{sweep, GridCell, StrategyKind, DEFAULT_TOL};
use dsl_core::Exec;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn trials(c: &mut Criterion) {
    let config = SimConfig {
        trials: 16,
        holdout: false,
        ..SimConfig::for_alpha_syn(100, 2.0, 0.6, 0.0, StrategyKind::KeepHardest)
    };
    let mut g = c.benchmark_group("simulation_trials");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_experiment(black_box(&config), exec).unwrap())
        });
    }
    g.finish();
}

fn theory_grid(c: &mut Criterion) {
    let mut grid = Vec::new();
    for f in [0.3, 0.6, 1.0] {
        for kind in [StrategyKind::KeepHardest, StrategyKind::KeepEasiest] {
            for a in [0.5, 1.0, 2.0, 4.0] {
                grid.push(GridCell::new(a, f, 0.0, kind));
            }
        }
    }
    let mut g = c.benchmark_group("theory_sweep");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sweep(black_box(&grid), DEFAULT_TOL, exec).unwrap())
        });
    }
    g.finish();
}

fn ensemble(c: &mut Criterion) {
    let task = toy_blobs(500, 10, 32, 2.0, 1).unwrap();
    let config = EnsembleConfig::default();
    let mut g = c.benchmark_group("ensemble_members");
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| build_ensemble(black_box(&task.train), &config, 3, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, trials, theory_grid, ensemble);
criterion_main!(benches);
