//! `aloft` — train, evaluate, and inspect depth-driven collision-avoidance
//! agents from the command line.
//!
//! Subcommands: `train` (curriculum training with CSV log and checkpoints),
//! `eval` (policy rollouts with survival statistics), `gan gen-data|train|eval`
//! (depth-estimator data and training), and `plot` (CSV to SVG). Exit codes:
//! 0 on success, 2 on configuration errors, 3 when training diverges.

mod args;
mod commands;
mod config;
mod csv;
mod error;
mod plot;

use clap::Parser;

use crate::args::{Cli, Command, GanCommand};
use crate::error::CliError;

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::cmd_train(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Gan(GanCommand::GenData(a)) => commands::cmd_gan_gen(a),
        Command::Gan(GanCommand::Train(a)) => commands::cmd_gan_train(a),
        Command::Gan(GanCommand::Eval(a)) => commands::cmd_gan_eval(a),
        Command::Plot(a) => commands::cmd_plot(a),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
