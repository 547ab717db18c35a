//! `noonfi` pipeline driver: calibrate, simulate, fit, and report.
//!
//! Every subcommand reads one TOML configuration and writes its artifacts
//! into a single output directory, so a full pipeline is
//!
//! ```text
//! noonfi calibrate --config run.toml
//! noonfi simulate  --config run.toml
//! noonfi fit       --config run.toml
//! noonfi advantage --config run.toml
//! ```
//!
//! with later stages picking up the artifacts of earlier ones. The exit code
//! is zero exactly when every artifact of the subcommand was written and is
//! schema-valid.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "noonfi",
    version,
    about = "Fisher-information pipeline for a lossy fibered two-photon interferometer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the per-line loss budget and audit it against quoted dB values.
    Calibrate(Common),
    /// Draw a Poisson fringe scan and write it as CSV plus metadata.
    Simulate(Common),
    /// Fit fringes, pool the visibility, and emit an information band.
    Fit(Common),
    /// Numeric and closed-form quantum-advantage report with curves.
    Advantage(Common),
    /// Advantage reports for loss-recovery scenarios.
    Scenario(Common),
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the scan seed from the configuration.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; defaults to the config value, then $NOONFI_OUT,
    /// then ./out.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, command): (Common, fn(&commands::Context) -> anyhow::Result<()>) =
        match cli.command {
            Command::Calibrate(c) => (c, commands::calibrate),
            Command::Simulate(c) => (c, commands::simulate),
            Command::Fit(c) => (c, commands::fit),
            Command::Advantage(c) => (c, commands::advantage),
            Command::Scenario(c) => (c, commands::scenario),
        };
    let result = commands::Context::new(common.config, common.seed, common.out)
        .and_then(|ctx| command(&ctx));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
