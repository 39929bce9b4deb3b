mod args;
mod commands;
mod error;
mod manifest;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use log::LevelFilter;

use args::{Cli, Command};
use error::CliError;

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::BuildGraph(a) => commands::build_graph_cmd(a),
        Command::Split(a) => commands::split(a),
        Command::Pretrain(a) => commands::pretrain_cmd(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Predict(a) => commands::predict_cmd(a),
        Command::ExportEmbeddings(a) => commands::export_cmd(a),
        Command::EarlyDetect(a) => commands::early_detect_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
