//! Command-line front end for the option market toolkit.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use commands::Context;
use config::{LoadedConfig, ObjectiveConfig, SideConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "optmarket", version, about = "Two-settlement market with a call option market")]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, short, global = true, default_value = "config.json")]
    pub config: PathBuf,
    /// Output directory, overriding `run.output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Day-ahead dispatch, and real-time dispatch at one scenario.
    Dispatch {
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Best response and variance effect of a bilateral call.
    Bilateral {
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Clear the centralized option market.
    Clear {
        #[arg(long, value_enum)]
        mode: Option<ObjectiveConfig>,
    },
    /// Trace the acceptability frontier of one participant.
    RiskBoundary {
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        id: Option<String>,
    },
    /// Payment distributions and moments.
    Simulate {
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SideArg {
    Buyer,
    Seller,
}

/// Runs one command and returns the report for stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let loaded = LoadedConfig::from_path(&cli.config)?;
    let out_dir = cli.out.clone().unwrap_or_else(|| loaded.config.run.output_dir.clone());
    let ctx = Context { loaded, out_dir };
    match &cli.command {
        Command::Dispatch { omega } => commands::cmd_dispatch(&ctx, *omega),
        Command::Bilateral { q, k, delta } => commands::cmd_bilateral(&ctx, *q, *k, *delta),
        Command::Clear { mode } => commands::cmd_clear(&ctx, *mode),
        Command::RiskBoundary { side, alpha, delta, id } => {
            let side = match side {
                SideArg::Buyer => SideConfig::Buyer,
                SideArg::Seller => SideConfig::Seller,
            };
            commands::cmd_risk_boundary(&ctx, side, *alpha, *delta, id.clone())
        }
        Command::Simulate { scenarios, seed } => commands::cmd_simulate(&ctx, *scenarios, *seed),
    }
}
