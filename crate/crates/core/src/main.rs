use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    geocd::cli::run(geocd::cli::Cli::parse())
}
