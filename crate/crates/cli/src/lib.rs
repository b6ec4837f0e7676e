//! Command-line front end: configuration ingestion, subcommand dispatch and
//! result emission.

pub mod config;
mod corr_table;
mod output;
mod rules_check;
mod simulate;
mod trace;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use platsim::error::ModelError;
use platsim::experiments::CorrelationModel;
use platsim::trial::DataSharing;

pub use config::{Format, RunConfig};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "PLATSIM_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "platsim",
    version,
    about = "Monte Carlo operating characteristics of Bayesian platform trials"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scenario grid and write operating characteristics.
    Simulate(simulate::SimulateArgs),
    /// Evaluate the decision rules on given arm counts.
    RulesCheck(rules_check::RulesCheckArgs),
    /// Tabulate joint endpoint distributions over a correlation grid.
    CorrTable(corr_table::CorrTableArgs),
    /// Write the event log of one replication of one cell.
    Trace(trace::TraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SharingArg {
    Cohort,
    Concurrent,
}

impl From<SharingArg> for DataSharing {
    fn from(s: SharingArg) -> Self {
        match s {
            SharingArg::Cohort => DataSharing::Cohort,
            SharingArg::Concurrent => DataSharing::Concurrent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    #[value(name = "latent-normal")]
    LatentNormal,
    Phi,
}

impl From<ModelArg> for CorrelationModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::LatentNormal => CorrelationModel::LatentNormal,
            ModelArg::Phi => CorrelationModel::Phi,
        }
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a, &mut out),
        Command::RulesCheck(a) => rules_check::run(a, &mut out),
        Command::CorrTable(a) => corr_table::run(a, &mut out),
        Command::Trace(a) => trace::run(a, &mut out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub(crate) fn load_config(path: Option<&std::path::Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}
