use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let args = mvee::cli::Args::parse();
    ExitCode::from(mvee::cli::execute(args))
}
