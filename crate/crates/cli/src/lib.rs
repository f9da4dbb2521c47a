//! Command line front end for `smallgain-core`: scenario files, CSV and
//! certificate output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use config::{parse_config, parse_str, Action};
pub use commands::Report;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "smallgain", version, about = "Incremental stability analysis of two-block interconnections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file (TOML). Optional for `figures`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to the scenario's `output` or `.`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the scenario tolerance (adaptive integration, quadrature).
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Integrate the system from each initial condition.
    Simulate,
    /// Gain budget and sampled decay certificate.
    Certify,
    /// Fit contraction envelopes to trajectory pairs.
    Estimate,
    /// Forward-invariant sublevel set and ultimate bound.
    InvariantSet,
    /// Tabulate the FitzHugh–Nagumo weight f_c.
    FcTable,
    /// Distance data of the three FitzHugh–Nagumo figure runs.
    Figures,
}

impl Command {
    pub fn action(self) -> Action {
        match self {
            Command::Simulate => Action::Simulate,
            Command::Certify => Action::Certify,
            Command::Estimate => Action::Estimate,
            Command::InvariantSet => Action::InvariantSet,
            Command::FcTable => Action::FcTable,
            Command::Figures => Action::Figures,
        }
    }
}

pub fn run(cli: &Cli) -> Result<Report> {
    let action = cli.command.action();
    let mut scenario = match (&cli.config, action) {
        (Some(p), _) => parse_config(p, action)?,
        (None, Action::Figures) => parse_str("[scenario]\nname = \"figures\"\n", Path::new("<defaults>"), action)?,
        (None, _) => {
            return Err(CliError::Config(format!("{} needs --config <path>", action.name())));
        }
    };
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    if let Some(tol) = cli.tolerance {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::Config("--tolerance must be positive".into()));
        }
        scenario.tolerance = tol;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| scenario.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match action {
        Action::Simulate => commands::simulate(&scenario, &dir),
        Action::Certify => commands::certify_cmd(&scenario, &dir),
        Action::Estimate => commands::estimate(&scenario, &dir),
        Action::InvariantSet => commands::invariant_set(&scenario, &dir),
        Action::FcTable => commands::fc_table_cmd(&scenario, &dir),
        Action::Figures => commands::figures(&scenario, &dir),
    }
}
