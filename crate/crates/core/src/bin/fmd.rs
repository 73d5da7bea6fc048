use std::process::ExitCode;

use clap::Parser;
use fmd_core::cli::{self, Cli, CliError};

fn main() -> ExitCode {
    // clap itself exits with code 2 on bad arguments
    let cli = Cli::parse();
    match cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(error)) => {
            eprintln!("error: {error:#}");
            ExitCode::from(1)
        }
    }
}
