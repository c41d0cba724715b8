//! `relprop` command-line tool.

mod args;
mod commands;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::args::{ExplainArgs, MakeToyArgs, OccludeArgs, TrainArgs, ValidateArgs};

#[derive(Parser)]
#[command(name = "relprop", version, about = "Relevance heatmaps, transfer training and occlusion checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic brightness dataset and a pretrained base model.
    MakeToy(MakeToyArgs),
    /// Retrain a model on a labeled image folder.
    Train(TrainArgs),
    /// Compute a relevance heatmap for one image.
    Explain(ExplainArgs),
    /// Re-score an image under a list of occlusions.
    Occlude(OccludeArgs),
    /// Sanity-check a saved model.
    Validate(ValidateArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeToy(a) => commands::make_toy::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Explain(a) => commands::explain::run(&a),
        Command::Occlude(a) => commands::occlude::run(&a),
        Command::Validate(a) => commands::validate::run(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
