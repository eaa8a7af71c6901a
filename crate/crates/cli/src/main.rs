//! `cgf-lab`: ingest data, fit an elliptical CGF model, query its
//! approximations and check it against Monte Carlo replicates.
//!
//! Exit codes: 0 success, 1 bad input, 2 numerical failure, 3 internal error.

// negated comparisons are used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod data;

use std::process::ExitCode;

use anyhow::Result;
use cgflab_core::CgfError;
use clap::{Parser, Subcommand};

use commands::{ApproxQuery, DEFAULT_SIGNIFICANCE};
use config::{Overrides, RunConfig};

/// Malformed or inconsistent user input.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(
    name = "cgf-lab",
    version,
    about = "Elliptical CGF models: fit, approximate, simulate"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the input CSV and print per-column summaries.
    Ingest,
    /// Estimate Γ, the coefficients and the mixing law; writes model.json.
    Fit {
        /// Drop orders whose sample cumulant is within this many null
        /// standard errors of zero (0 keeps every order).
        #[arg(long, default_value_t = DEFAULT_SIGNIFICANCE)]
        significance: f64,
    },
    /// Monte Carlo replicates from the model; writes replicates.csv, bands.csv
    /// and blockmax.csv (with --block).
    Simulate {
        /// Also write one simulated sample to sample.csv.
        #[arg(long)]
        sample: bool,
    },
    /// Compare the observed data with replicate bands; writes bands.csv,
    /// report.txt and blockmax.csv (with --block).
    Report,
    /// Closed-form approximations from the fitted model.
    Approx {
        /// Restrict to these columns (names or indices).
        #[arg(long, global = true, value_delimiter = ',')]
        subset: Vec<String>,
        #[command(subcommand)]
        query: ApproxCommand,
    },
    /// Lancaster measure or Hoeffding integral of the empirical distribution.
    Lancaster {
        /// Evaluate ΔF at this comma-separated point.
        #[arg(long)]
        point: Option<String>,
        /// Nodes per axis of the integration grid.
        #[arg(long, default_value_t = 128)]
        nodes: usize,
        /// Allowed change under grid refinement (default 1% of sd_x·sd_y).
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Check Γ and the coefficients of a model document.
    Validate,
}

#[derive(Subcommand)]
enum ApproxCommand {
    /// Saddlepoint density at a point.
    Density {
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
    /// Upper tail of the sum (--threshold), or orthant probability (--marginal)
    /// integrated from the unnormalised saddlepoint density.
    Tail {
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        marginal: Option<String>,
    },
    /// Cornish-Fisher quantile of the sum.
    Quantile {
        #[arg(long)]
        p: f64,
    },
    /// Differential entropy approximation (the third-cumulant correction
    /// vanishes for elliptical models).
    Entropy,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CGFLAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| InputError(format!("CGFLAB_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = RunConfig::resolve(&cli.overrides)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Fit { significance } => {
            if !(significance >= 0.0) {
                return Err(InputError("significance must be non-negative".into()).into());
            }
            commands::fit(&cfg, significance)
        }
        Command::Simulate { sample } => commands::simulate(&cfg, sample),
        Command::Report => commands::report(&cfg),
        Command::Approx { subset, query } => {
            let query = match query {
                ApproxCommand::Density { x } => ApproxQuery::Density { x },
                ApproxCommand::Tail { threshold, marginal } => ApproxQuery::Tail { threshold, marginal },
                ApproxCommand::Quantile { p } => ApproxQuery::Quantile { p },
                ApproxCommand::Entropy => ApproxQuery::Entropy,
            };
            commands::approx(&cfg, &subset, query)
        }
        Command::Lancaster {
            point,
            nodes,
            tolerance,
        } => commands::lancaster(&cfg, point, nodes, tolerance),
        Command::Validate => commands::validate(&cfg),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CgfError>() {
            return if c.is_numerical() { 2 } else { 1 };
        }
        if cause.is::<InputError>()
            || cause.is::<std::io::Error>()
            || cause.is::<csv::Error>()
            || cause.is::<serde_json::Error>()
        {
            return 1;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
