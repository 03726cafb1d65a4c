mod compare;
mod difficulty;
mod distill;
mod simulate;
mod theory;

use std::time::Instant;

use anyhow::Result;
use dsl_core::report::{csv_to_json, RunWriter};
use dsl_core::Exec;
use serde::Serialize;

use crate::config::{self, DifficultyConfig, DistillConfig, SimulateConfig, TheoryConfig};
use crate::{Cli, Command, Format};

pub enum Status {
    Complete,
    Incomplete(String),
}

pub struct Ctx<'a> {
    pub cli: &'a Cli,
    pub exec: Exec,
    pub writer: RunWriter,
    started: Instant,
}

impl Ctx<'_> {
    /// Writes a numeric table as `<stem>.csv` or `<stem>.json`.
    pub fn table(&mut self, stem: &str, csv: &[u8]) -> Result<()> {
        match self.cli.format {
            Format::Csv => self.writer.write(&format!("{stem}.csv"), csv)?,
            Format::Json => self.writer.write(&format!("{stem}.json"), &csv_to_json(csv)?)?,
        };
        Ok(())
    }

    pub fn finish<C: Serialize>(self, command: &str, seed: u64, config: &C) -> Result<()> {
        let wall = self.started.elapsed().as_secs_f64();
        let echo = serde_json::to_value(config)?;
        let m = self.writer.finish(env!("CARGO_PKG_VERSION"), command, seed, echo, wall)?;
        log::info!("wrote {} files and manifest.json to {}", m.outputs.len(), self.cli.out.display());
        Ok(())
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

pub fn run(cli: &Cli) -> Result<Status> {
    let path = cli.config.as_deref();
    match &cli.command {
        Command::Theory => execute(cli, config::load::<TheoryConfig>(path)?, |_| 0, theory::run),
        Command::Simulate => {
            let mut c: SimulateConfig = config::load(path)?;
            c.seed = cli.seed.unwrap_or(c.seed);
            execute(cli, c, |c| c.seed, simulate::run)
        }
        Command::Distill => {
            let mut c: DistillConfig = config::load(path)?;
            c.seed = cli.seed.unwrap_or(c.seed);
            execute(cli, c, |c| c.seed, distill::run)
        }
        Command::Difficulty => {
            let mut c: DifficultyConfig = config::load(path)?;
            c.seed = cli.seed.unwrap_or(c.seed);
            execute(cli, c, |c| c.seed, difficulty::run)
        }
        Command::Compare { theory, simulation, sigmas, min_pass_fraction } => {
            if cli.print_defaults {
                print!("# compare takes no config file\n");
                return Ok(Status::Complete);
            }
            let echo = serde_json::json!({
                "theory": theory,
                "simulation": simulation,
                "sigmas": sigmas,
                "min_pass_fraction": min_pass_fraction,
            });
            execute(cli, echo, |_| 0, |ctx, _| compare::run(ctx, theory, simulation, *sigmas, *min_pass_fraction))
        }
    }
}

/// Prints the resolved config for `--print-defaults`; otherwise runs
/// `body` and writes the manifest.
fn execute<C: Serialize>(
    cli: &Cli,
    config: C,
    seed: impl Fn(&C) -> u64,
    body: impl FnOnce(&mut Ctx, &C) -> Result<Status>,
) -> Result<Status> {
    if cli.print_defaults {
        print!("{}", toml::to_string_pretty(&config)?);
        return Ok(Status::Complete);
    }
    dsl_core::exec::configure_threads(cli.jobs);
    let mut ctx = Ctx {
        cli,
        exec: Exec::for_jobs(cli.jobs),
        writer: RunWriter::new(&cli.out)?,
        started: Instant::now(),
    };
    let status = body(&mut ctx, &config)?;
    ctx.finish(&command_line(), seed(&config), &config)?;
    Ok(status)
}
