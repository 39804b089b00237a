//! Command-line front end.
//!
//! Every subcommand reads one configuration file, runs its campaign and
//! writes `<command>.csv` and `<command>.events.jsonl` into the output
//! directory. Exit codes: 0 success, 1 runtime failure, 2 invalid input.

mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::addressing::Channel;
use crate::model::CellIndex;

pub use commands::RunFlags;
pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mxmem",
    version,
    about = "Simulate and analyse a multiplexed atomic-ensemble quantum memory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML, or the JSON `config` of a log header).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Validate and print the campaign plan without sampling.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Silence the warning for storage times between Larmor periods.
    #[arg(long, global = true)]
    pub allow_off_larmor: bool,
    /// Also write an SVG plot of the output table.
    #[arg(long, global = true)]
    pub svg: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScanChannel {
    Write,
    Read,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// g_c of every cell.
    CorrelationMap,
    /// Coincidences with one beam moved across the target's neighbours.
    Crosstalk {
        #[arg(long, value_enum)]
        channel: ScanChannel,
        /// Target cell as `x,y`.
        #[arg(long, value_parser = parse_cell)]
        target: Option<CellIndex>,
    },
    /// Tomography of the configured pairs.
    Entangle {
        #[arg(long)]
        storage_time: Option<f64>,
    },
    /// g_c of a cell, or the fidelity of a pair, against storage time.
    StorageScan {
        /// Cell as `x,y`.
        #[arg(long, value_parser = parse_cell, conflicts_with = "pair")]
        cell: Option<CellIndex>,
        /// Pair as `x,y:x,y`.
        #[arg(long, value_parser = parse_pair)]
        pair: Option<[CellIndex; 2]>,
        /// Comma-separated storage times in µs.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
    },
    /// Check the configuration and report the calibration.
    Validate,
}

fn parse_cell(s: &str) -> Result<CellIndex, String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok(CellIndex::new(n(x)?, n(y)?))
}

fn parse_pair(s: &str) -> Result<[CellIndex; 2], String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected x,y:x,y, got {s:?}"))?;
    Ok([parse_cell(a)?, parse_cell(b)?])
}

/// Applies the command-line overrides; they become part of the recorded
/// configuration so a log header alone reproduces the run.
fn effective_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        config.output_dir = out.clone();
    }
    match &cli.command {
        Command::Crosstalk {
            target: Some(t), ..
        } => config.crosstalk.target = *t,
        Command::Entangle {
            storage_time: Some(t),
        } => config.entangle.storage_time_us = *t,
        Command::StorageScan { cell, pair, times } => {
            if cell.is_some() {
                config.storage_scan.cell = *cell;
                config.storage_scan.pair = None;
            }
            if pair.is_some() {
                config.storage_scan.pair = *pair;
            }
            if times.is_some() {
                config.storage_scan.times_us = times.clone();
            }
        }
        _ => {}
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = effective_config(&cli)?;
    let flags = RunFlags {
        dry_run: cli.common.dry_run,
        allow_off_larmor: cli.common.allow_off_larmor,
        svg: cli.common.svg,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::CorrelationMap => {
            commands::correlation_map(&commands::Session::new(config, flags, "correlation-map")?)
        }
        Command::Crosstalk { channel, .. } => {
            let (name, ch) = match channel {
                ScanChannel::Write => ("crosstalk-write", Channel::Write),
                ScanChannel::Read => ("crosstalk-read", Channel::Read),
            };
            commands::crosstalk(&commands::Session::new(config, flags, name)?, ch)
        }
        Command::Entangle { .. } => {
            commands::entangle(&commands::Session::new(config, flags, "entangle")?)
        }
        Command::StorageScan { .. } => {
            commands::storage_scan(&commands::Session::new(config, flags, "storage-scan")?)
        }
        Command::Validate => {
            commands::validate(&commands::Session::new(config, flags, "validate")?)
        }
    })
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run_from(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_and_pair_arguments() {
        assert_eq!(parse_cell("8,9").unwrap(), CellIndex::new(8, 9));
        assert_eq!(
            parse_pair("8,8:9,8").unwrap(),
            [CellIndex::new(8, 8), CellIndex::new(9, 8)]
        );
        assert!(parse_cell("8").is_err());
        assert!(parse_pair("8,8").is_err());
    }

    #[test]
    fn missing_config_is_a_validation_error() {
        assert_eq!(run_from(["mxmem", "validate"]), 2);
        assert_eq!(run_from(["mxmem", "no-such-command"]), 2);
    }
}
