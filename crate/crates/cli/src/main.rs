mod args;
mod commands;
mod reproduce;

use std::process::ExitCode;

use clap::Parser;
use mppc_core::Error;

use args::{Cli, Command};

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Inconsistent or missing flags.
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::UndefinedStatistic(_) | Error::CannotEstimate(_)) => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let out = commands::Output { quiet: cli.quiet };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &out),
        Command::G2(a) => commands::g2(&a, &out),
        Command::Calibrate(a) => commands::calibrate(&a, &out),
        Command::Nrf(a) => commands::nrf(&a, &out),
        Command::Povm(a) => commands::povm(&a, &out),
        Command::Reproduce(a) => reproduce::run(&a, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
