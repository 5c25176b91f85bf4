//! Command-line front end for moment-based gene-set tests.

pub mod args;
pub mod bench;
pub mod compare;
pub mod pipeline;

use args::{Cli, Command};
use pipeline::CliError;

/// Run one subcommand and map the outcome to a process exit code.
pub fn run(cli: &Cli) -> i32 {
    let outcome: Result<(), CliError> = match &cli.command {
        Command::Test(a) => pipeline::cmd_test(a).map(drop),
        Command::Compare(a) => compare::cmd_compare(a).map(drop),
        Command::Bench(a) => bench::cmd_bench(a).map(drop),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gsmoment: {e}");
            e.exit_code()
        }
    }
}
