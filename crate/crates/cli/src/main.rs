use std::process::ExitCode;

use clap::Parser;
use zigam_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.envelope());
            ExitCode::FAILURE
        }
    }
}
