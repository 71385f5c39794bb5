//! Experiment driver: configuration, run manifests and the subcommands.

pub mod checks;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod stats;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::error;

use crate::commands::Status;
use crate::config::{parse_tol_override, ConfigError, ExperimentConfig, Overrides};
use crate::manifest::Run;

#[derive(Debug, Parser)]
#[command(name = "swiss-cheese", version, about = "Rate function, walk statistics and tube experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override a tolerance, e.g. `--tol-override pohozaev=1e-4`.
    #[arg(long = "tol-override", value_name = "KEY=VAL", global = true)]
    pub tol_override: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve I(b) over a grid and check the multiplier identities.
    RateCurve,
    /// Range statistics and the escape probability.
    WalkStats,
    /// Distances of conditioned and unconditioned skeletons to the minimizer.
    Tube,
    /// Distance between a Gaussian mixture and its limiting orbit collection.
    MvDemo,
    /// Run every identity check.
    Verify,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::RateCurve => "rate-curve",
            Command::WalkStats => "walk-stats",
            Command::Tube => "tube",
            Command::MvDemo => "mv-demo",
            Command::Verify => "verify",
            Command::ShowConfig => "show-config",
        }
    }
}

/// Loads the configuration and validates the section `command` needs.
pub fn resolve_config(cli: &Cli) -> Result<(ExperimentConfig, BTreeMap<String, f64>), ConfigError> {
    let tolerances = cli.tol_override.iter().map(|s| parse_tol_override(s)).collect::<Result<Vec<_>, _>>()?;
    let overrides =
        Overrides { seed: cli.seed, workers: cli.workers, out: cli.out.clone(), tolerances: tolerances.clone() };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::RateCurve => cfg.rate_curve.validate()?,
        Command::WalkStats => cfg.walk_stats.validate()?,
        Command::Tube => cfg.tube.validate()?,
        Command::MvDemo => cfg.mv_demo.validate()?,
        Command::Verify => cfg.verify.validate()?,
        Command::ShowConfig => {}
    }
    Ok((cfg, tolerances.into_iter().collect()))
}

/// Runs one subcommand with a manifest around it.
pub fn execute(
    command: Command,
    cfg: &ExperimentConfig,
    argv: Vec<String>,
    tol_overrides: BTreeMap<String, f64>,
) -> anyhow::Result<Status> {
    let mut run = Run::start(command.name(), cfg, argv, tol_overrides)?;
    run.write("config.toml", cfg.to_toml().as_bytes())?;
    let result = swiss_cheese::exec::with_workers(cfg.workers, || {
        let run = &mut run;
        match command {
            Command::RateCurve => commands::cmd_rate_curve(cfg, run).map(|r| r.0),
            Command::WalkStats => commands::cmd_walk_stats(cfg, run).map(|r| r.0),
            Command::Tube => commands::cmd_tube(cfg, run).map(|r| r.0),
            Command::MvDemo => commands::cmd_mv_demo(cfg, run).map(|r| r.0),
            Command::Verify => commands::cmd_verify(cfg, run).map(|r| r.0),
            Command::ShowConfig => Ok(Status::Ok),
        }
    });
    match result {
        Ok(status) => {
            run.finish(status.as_str())?;
            Ok(status)
        }
        Err(e) => {
            let status = if e.is::<ConfigError>() { "config_error" } else { "error" };
            run.finish(status)?;
            Err(e)
        }
    }
}

/// Entry point shared by the binary; returns the process exit code.
pub fn run_cli(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (cfg, tol) = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            return 2;
        }
    };
    if cli.command == Command::ShowConfig {
        print!("{}", cfg.to_toml());
        return 0;
    }
    match execute(cli.command, &cfg, args, tol) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<ConfigError>() {
                2
            } else {
                1
            }
        }
    }
}
