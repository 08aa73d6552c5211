use std::process::ExitCode;

use aggshock::cli::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let code = run(Cli::parse());
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
