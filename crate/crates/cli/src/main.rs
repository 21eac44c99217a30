mod commands;
mod config;

use std::process::ExitCode;

use clap::{error::ErrorKind, Parser};

use commands::Cli;

/// Marks failures of the tool's own consistency checks (exit code 3).
#[derive(Debug, thiserror::Error)]
#[error("internal invariant violated: {0}")]
pub struct Internal(pub String);

/// Bad flag combinations detected after parsing (exit code 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Internal>().is_some() {
        return 3;
    }
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<spatialgen::Error>() {
        Some(e) if !e.is_data_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
