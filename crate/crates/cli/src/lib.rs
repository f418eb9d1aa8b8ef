//! Command-line front end: configuration, data ingestion, and result documents
//! for local polynomial estimation, calibration, the risk lab, and
//! Karhunen-Loeve complexity.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use config::{Format, RunConfig};
use error::{CliError, CliResult};
use output::{render, Document};

const CONFIG_HELP: &str = "\
Configuration is TOML; every key is optional and the resolved values are echoed
into each output document. Defaults:

  seed = 1, threads = 0 (all cores), format = \"records\"

  [estimate]   kernel = \"rectangular\", p = 2, h1 = 0.05, u = 1.25, K = 8,
               noise = \"homoscedastic:1\" (or \"column\"), points = [0.5]
  [estimate.cv] source = \"theoretical\" | \"monte-carlo\" | \"file\", file,
               r = 1, alpha = 1, mu = 0.1, replicates = 10000
  [calibrate]  method = \"theoretical\" | \"monte-carlo\", p = 1, r = 1, alpha = 1,
               u = 1.5, K = 5, mu = 0.1, replicates = 10000, n = 200, x = 0.5,
               h1 = 0.03, kernel = \"rectangular\", sigma = 1
  [risk]       scenario = \"parametric-linear\", replicates (scenario default),
               delta_budget = 1, cv = \"theoretical\", mu = 0.1,
               calibration_replicates = 10000
  [complexity] field = \"brownian-bridge\", action = \"exact\" | \"asymptotic\" | \"table\",
               epsilon = 0.5, d = 3, d_min = 1, d_max = 6, m (field default),
               budget = 1e8

Scenarios: parametric-linear, constant, kink, sine, holder, misspecified.
Fields: brownian-sheet, brownian-bridge, centered-wiener, centered-bridge,
centered-integrated-bridge, anderson-darling, pycke:MU, geometric:RHO.

Exit codes: 0 success, 2 validation error, 3 budget exceeded, 4 parse error.";

#[derive(Debug, Parser)]
#[command(name = "lpa", version, about = "Adaptive local polynomial estimation and KL truncation complexity")]
#[command(after_long_help = CONFIG_HELP)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Observation file with header `x,y` or `x,y,sigma`.
    #[arg(long, global = true, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Write the document here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Override a configuration key, e.g. `--set complexity.d=4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Progress messages on standard error.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Adaptive estimates at the configured reference points.
    Estimate,
    /// Critical values, theoretical or Monte Carlo.
    Calibrate,
    /// Run a named simulation scenario with its invariant checks.
    Risk,
    /// Exact and asymptotic information complexity.
    Complexity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Calibrate => "calibrate",
            Command::Risk => "risk",
            Command::Complexity => "complexity",
        }
    }
}

/// Merges the config file, `--set` overrides and global flags.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        None => None,
    };
    let mut cfg = config::load(text.as_deref(), &cli.set)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.display().to_string());
    }
    cfg.verbose |= cli.verbose;
    Ok(cfg)
}

/// Runs one command and returns the rendered document.
pub fn run_command(command: Command, cfg: &RunConfig, data: Option<&Path>) -> CliResult<String> {
    let name = command.name();
    let text = match command {
        Command::Estimate => render(&Document::new(name, cfg, commands::estimate(cfg, data)?), cfg.format),
        Command::Calibrate => render(&Document::new(name, cfg, commands::calibrate(cfg, data)?), cfg.format),
        Command::Risk => render(&Document::new(name, cfg, commands::risk(cfg)?), cfg.format),
        Command::Complexity => render(&Document::new(name, cfg, commands::complexity(cfg)?), cfg.format),
    };
    Ok(text)
}

/// Full pipeline behind the binary: resolve, run, write.
pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = resolve_config(cli)?;
    let threads = if cfg.threads == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { cfg.threads };
    // A pool may already exist when called twice in one process; keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let text = run_command(cli.command, &cfg, cli.data.as_deref())?;
    match &cfg.out {
        Some(p) => {
            let path = Path::new(p);
            std::fs::write(path, text).map_err(|e| CliError::io(path, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
