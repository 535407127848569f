use std::process::ExitCode;

use clap::Parser;
use glycovae::cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("wrote {} files to {}", outcome.outputs.len(), cli.out.display());
            if let Some(msg) = outcome.incomplete {
                eprintln!("warning: {msg}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
