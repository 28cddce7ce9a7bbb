//! `transport`: estimate, sensitivity-analyze and simulate transported trial results.

mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;
use transport_core::InferenceMethod;

#[derive(Debug, Parser)]
#[command(name = "transport", version, about = "Transport randomized-trial estimates to a target population")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Base-case (or single-cell) estimates for every configured estimator.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
        /// Bias parameter u(0) of the single cell.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        u0: f64,
        /// Bias parameter δ of the single cell.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        delta: f64,
    },
    /// Estimates across the (u0, δ) grid, with optional SVG curves.
    Sensitivity {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Draw a dataset from the configured data-generating process.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Report rows with extreme participation or treatment probabilities.
    CheckPositivity {
        #[command(flatten)]
        run: RunArgs,
        /// Flag probabilities below this value (or above 1 minus it).
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Input CSV, overriding the configured path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for bootstrap resampling and simulation.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the bootstrap with this many replicates.
    #[arg(long, value_name = "B")]
    bootstrap: Option<usize>,
    /// Confidence level.
    #[arg(long)]
    level: Option<f64>,
    /// Emit SVG sensitivity curves.
    #[arg(long)]
    plot: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(data) = &self.data {
            cfg.data.path = Some(data.clone());
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.inference.seed = seed;
            if let Some(sim) = cfg.simulation.as_mut() {
                sim.seed = seed;
            }
        }
        if let Some(b) = self.bootstrap {
            cfg.inference.method = InferenceMethod::Bootstrap;
            cfg.inference.replicates = b;
        }
        if let Some(level) = self.level {
            if !(level > 0.0 && level < 1.0) {
                return Err(CliError::usage("config", format!("--level {level} must lie in (0, 1)")));
            }
            cfg.inference.level = level;
        }
        cfg.output.plot |= self.plot;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate { run, u0, delta } => commands::estimate(&run.resolve()?, u0, delta),
        Command::Sensitivity { run } => commands::sensitivity(&run.resolve()?),
        Command::Simulate { run } => commands::simulate(&run.resolve()?),
        Command::CheckPositivity { run, threshold } => {
            let mut cfg = run.resolve()?;
            if let Some(t) = threshold {
                cfg.positivity_threshold = t;
            }
            commands::check_positivity(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind as u8)
        }
    }
}
