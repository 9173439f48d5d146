//! Library half of the `airx` binary: flag definitions and command
//! implementations, exposed so integration tests can drive commands
//! in-process.

pub mod args;
pub mod commands;
pub mod datagen;

pub use args::{Cli, Command};

/// Dispatches a parsed command line, returning the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Build(a) => commands::cmd_build(a),
        Command::Query(a) => commands::cmd_query(a),
        Command::Sweep(a) => commands::cmd_sweep(a),
        Command::SimulateMotivating => commands::cmd_simulate_motivating(),
        Command::Bench(a) => commands::cmd_bench(a),
        Command::Profile(a) => commands::cmd_profile(a),
        Command::GenKeys(a) => commands::cmd_gen_keys(a),
    }
}
