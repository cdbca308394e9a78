use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(fbmlab_cli::run(fbmlab_cli::Cli::parse()))
}
