use std::process::ExitCode;

use clap::Parser;
use mechprior::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    match cli::init_threads().and_then(|()| cli::run(args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mechprior: {e}");
            ExitCode::FAILURE
        }
    }
}
