//! `dsl`: command-line driver for the theory, simulation, distillation and
//! difficulty experiments.
//!
//! Exit status: 0 when all requested work converged or passed, 1 when some
//! of it failed (partial outputs are still written), 2 on usage or config
//! errors, 3 on I/O or internal errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "dsl", version, about = "Scaling-law theory, perceptron simulation and difficulty-corrected distillation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration (defaults apply to missing keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Encoding of numeric tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Exit 0 even if some cells, trials or seeds failed.
    #[arg(long, global = true)]
    allow_partial: bool,
    /// Print the default config of the subcommand as TOML and exit.
    #[arg(long, global = true)]
    print_defaults: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the saddle-point equations over a grid.
    Theory,
    /// Monte Carlo max-margin perceptron experiment over a grid.
    Simulate,
    /// Join a theory table with a simulation summary and test agreement.
    Compare {
        theory: PathBuf,
        simulation: PathBuf,
        /// Pass threshold in combined standard errors.
        #[arg(long, default_value_t = 2.0)]
        sigmas: f64,
        /// Fraction of points that must pass for exit status 0.
        #[arg(long, default_value_t = 1.0)]
        min_pass_fraction: f64,
    },
    /// Paired baseline vs difficulty-corrected distillation.
    Distill,
    /// Ensemble difficulty scores and their correlations.
    Difficulty,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DSL_LOG", "info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(commands::Status::Complete) => ExitCode::SUCCESS,
        Ok(commands::Status::Incomplete(why)) => {
            log::error!("{why}");
            if cli.allow_partial {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
