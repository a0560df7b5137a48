mod commands;
mod config;

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use crate::config::{Cli, Command, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = RunConfig::resolve(cli)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| CliError::io(&config.out_dir, e))?;
    match config.command {
        Command::SolveTime => commands::solve_time(&config),
        Command::SolveFuel => commands::solve_fuel(&config),
        Command::Batch => commands::batch(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("softland: {e}");
            ExitCode::from(e.code())
        }
    }
}
