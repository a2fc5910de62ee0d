//! `envaware`: generate tasks, run condition grids, train weights from
//! demonstrations, compare strategies, and serve or drive live sessions.
//!
//! Option values come from, in decreasing priority: the command line, the
//! file named by `--config`, `ENVAWARE_*` environment variables, and the
//! built-in defaults.

mod args;
mod config;
mod experiment;
mod remote;
mod train;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenTask(a) => experiment::gen_task(&a),
        Command::Run(a) => experiment::run(&a),
        Command::Compare(a) => experiment::compare(&a),
        Command::TrainIrl(a) => train::train_irl(&a),
        Command::Serve(a) => remote::serve(&a),
        Command::Session(a) => remote::session(&a),
    }
}
