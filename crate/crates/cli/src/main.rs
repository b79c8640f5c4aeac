mod commands;
mod manifest;

use clap::Parser;

use commands::{Cli, CliError};

fn main() {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(err.exit_code());
        }
    }
}

impl CliError {
    /// 2 = bad configuration or missing inputs, 3 = input parse failure,
    /// 4 = internal invariant violation.
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}
