//! Command-line front end: JSON run configurations, subcommands and exit codes.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{Check, Outcome, Study};
pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mongeampere", version, about = "Complex Monge-Ampere Dirichlet problems on boxes and balls")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the outer fixed-point iteration and print a JSON summary.
    Solve { config: PathBuf },
    /// Run numerical checks; exits 1 if any fails.
    Verify {
        config: PathBuf,
        #[arg(long = "check", value_enum, required = true)]
        checks: Vec<Check>,
    },
    /// Convergence or stability tables as CSV.
    Study {
        #[arg(value_enum)]
        kind: Study,
        config: PathBuf,
    },
    /// Solve a radially symmetric problem on a ball.
    Radial { config: PathBuf },
}

impl Command {
    fn config_path(&self) -> &PathBuf {
        match self {
            Self::Solve { config }
            | Self::Verify { config, .. }
            | Self::Study { config, .. }
            | Self::Radial { config } => config,
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    commands::configure_threads()?;
    let cfg = RunConfig::load(cli.command.config_path())?;
    match &cli.command {
        Command::Solve { .. } => commands::solve(&cfg),
        Command::Verify { checks, .. } => commands::verify(&cfg, checks),
        Command::Study { kind, .. } => commands::study(&cfg, *kind),
        Command::Radial { .. } => commands::radial(&cfg),
    }
}
