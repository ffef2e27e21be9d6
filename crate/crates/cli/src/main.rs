//! `hypgl`: command-line driver for the surface, spectral and
//! Ginzburg-Landau pipelines.

mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, Result};

#[derive(Parser)]
#[command(name = "hypgl", version, about = "Vortex lattices on hyperbolic congruence surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Cusp count, genus, area and coset index of Γ(N).
    Surface { n: u64 },
    /// Truncated fundamental-domain mesh as JSON.
    Mesh,
    /// Lowest eigenvalues of the magnetic Laplacian.
    Spectrum,
    /// Poincaré series on a horizontal cusp line and its Fourier coefficients.
    Cuspform,
    /// Abrikosov constants of the ground space.
    Beta,
    /// Leading-order branch over the r sweep.
    Bifurcate {
        /// Also run the minimizer at every sweep point.
        #[arg(long)]
        measure: bool,
    },
    /// Minimize the energy at one (κ, r).
    Solve,
    /// Continuation of minimizers over the r sweep.
    Sweep,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.overrides.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let cfg = RunConfig::load(&cli.overrides)?;
    match cli.command {
        Command::Surface { n } => commands::surface(&cfg, n),
        Command::Mesh => commands::mesh(&cfg),
        Command::Spectrum => commands::spectrum(&cfg),
        Command::Cuspform => commands::cuspform(&cfg),
        Command::Beta => commands::beta(&cfg),
        Command::Bifurcate { measure } => commands::bifurcate(&cfg, measure),
        Command::Solve => commands::solve(&cfg),
        Command::Sweep => commands::sweep(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hypgl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
