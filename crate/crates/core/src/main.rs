use clap::Parser;
use rootcause::cli::{run, Cli};

fn main() -> std::process::ExitCode {
    run(Cli::parse())
}
