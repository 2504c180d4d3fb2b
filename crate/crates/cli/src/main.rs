use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cobench::Cli::parse();
    match cobench::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
