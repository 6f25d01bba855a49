use std::process::ExitCode;

use clap::Parser;
use loiterplan::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
