mod cli;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use nndp::NndpError;
use thiserror::Error;

use crate::cli::{Cli, Command};
use crate::config::{FileConfig, Resolved};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] NndpError),
    #[error("configuration error: {0}")]
    Config(String),
}

impl CliError {
    /// 2 for malformed input data, 3 for numerical failures, 4 for
    /// configuration problems.
    pub fn exit_code(&self) -> u8 {
        use NndpError::*;
        match self {
            CliError::Config(_) => 4,
            CliError::Core(e) => match e {
                Schema { .. } | DimensionMismatch { .. } | LengthMismatch { .. } | DuplicateLocation { .. } | Empty(_) => 2,
                InvalidConfig(_) | InvalidParameter(_) | InvalidDirection(_) | UnsupportedSmoothness(_) | NotDifferentiable(_)
                | CapExceeded { .. } | MissingDirection(_) | Io(_) => 4,
                CoincidesWithReference(_)
                | EquidistantQuery { .. }
                | CoincidentNewPair
                | SingularNeighborSystem { .. }
                | NotPositiveDefinite(_)
                | NonFinite(_)
                | ZeroVariance => 3,
            },
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let threads = cli.threads.or(file.threads).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::Config("threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    let cfg = Resolved { file: &file, seed: cli.seed.or(file.seed).unwrap_or(1) };
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&cfg, a),
        Command::Fit(a) => commands::fit(&cfg, a),
        Command::Grad(a) => commands::grad(&cfg, a),
        Command::Fd(a) => commands::fd(&cfg, a),
        Command::Exact(a) => commands::exact(&cfg, a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Bench(a) => commands::bench(&cfg, a),
        Command::Ingest(a) => commands::ingest(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(4);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
