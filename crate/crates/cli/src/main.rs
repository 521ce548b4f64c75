//! `ots`: train, predict, index, query and evaluate from the command line.

mod args;
mod commands;
mod inputs;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| run(cli));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("ots: error: {}", one_line(&format!("{err:#}")));
            ExitCode::from(exit_code(&err))
        }
        // the panic hook has already printed the message
        Err(_) => ExitCode::from(3),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train(a) => commands::train(a, seed),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Index(a) => commands::index(a),
        Command::Query(a) => commands::query(a),
        Command::PreprocessFit(a) => commands::preprocess_fit(a),
        Command::PreprocessApply(a) => commands::preprocess_apply(a),
        Command::Plans(a) => commands::plans(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ots_core::Error>() {
        Some(ots_core::Error::Invariant(_)) => 3,
        _ => 2,
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}
