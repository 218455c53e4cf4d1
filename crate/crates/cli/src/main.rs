use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kbnet::ErrorClass;

mod commands;
mod settings;

use settings::Settings;

/// Knock-on benefit centrality of VAR(1) financial networks.
#[derive(Debug, Parser)]
#[command(name = "kbnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the VAR(1) network of a panel and certify stationarity (JSON).
    Estimate(Settings),
    /// Node KB, degree and DebtRank centralities of the full-sample network (CSV).
    Centrality(Settings),
    /// Nonzero and pairwise significance tests of node KB (CSV).
    Test(Settings),
    /// Centrality measures over rolling windows (CSV).
    Rolling(Settings),
    /// Monte Carlo check of the asymptotic distribution (JSON, plus CSVs with --output).
    Simulate(Settings),
    /// Relative change of windowed measures across a split date (CSV).
    Compare(Settings),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] kbnet::Error),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Assertion(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Input(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Numerical => 3,
            },
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, settings) = match cli.command {
        Command::Estimate(s) => ("estimate", s),
        Command::Centrality(s) => ("centrality", s),
        Command::Test(s) => ("test", s),
        Command::Rolling(s) => ("rolling", s),
        Command::Simulate(s) => ("simulate", s),
        Command::Compare(s) => ("compare", s),
    };
    let settings = settings.resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = settings.jobs {
        if jobs == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Input(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match name {
        "estimate" => commands::estimate(&settings),
        "centrality" => commands::centrality(&settings),
        "test" => commands::test(&settings),
        "rolling" => commands::rolling(&settings),
        "simulate" => commands::simulate(&settings),
        _ => commands::compare(&settings),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
