mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] curator_core::Error),
    #[error(transparent)]
    Service(#[from] curator_service::ServiceError),
    #[error("set CURATOR_AUTHOR to the acting researcher id")]
    MissingAuthor,
    #[error("{0}")]
    BadArgument(String),
    #[error("{0} gate finding(s)")]
    AuditFailed(usize),
}

impl CliError {
    pub fn code(&self) -> &str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Service(e) => e.code(),
            CliError::MissingAuthor => "MissingAuthor",
            CliError::BadArgument(_) => "BadArgument",
            CliError::AuditFailed(_) => "AuditFailed",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {}", e.code(), message);
            ExitCode::from(1)
        }
    }
}
