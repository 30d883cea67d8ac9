mod commands;
mod failure;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::{EvalArgs, ExportArgs, IngestArgs, SplitArgs, SweepArgs, SynthArgs, TrainArgs};
use failure::{Failure, Outcome};

/// Graph recommender with learned rationale subgraphs.
#[derive(Parser, Debug)]
#[command(name = "rationale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a raw interaction file and write it back with duplicates removed
    Ingest(IngestArgs),
    /// Partition interactions into train/valid/test files
    Split(SplitArgs),
    /// Train a model, checkpointing after every epoch
    Train(TrainArgs),
    /// Score a checkpoint on the test partition
    Eval(EvalArgs),
    /// Retrain under increasing graph perturbation
    Sweep(SweepArgs),
    /// Write per-edge rationale scores of a checkpoint
    ExportRationales(ExportArgs),
    /// Generate a block-structured synthetic dataset
    Synth(SynthArgs),
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Split(a) => commands::split(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::ExportRationales(a) => commands::export_rationales(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}

fn main() -> ExitCode {
    let keys = settings::defaults_help();
    let cmd = Cli::command()
        .mut_subcommand("train", |c| c.after_help(keys.clone()))
        .mut_subcommand("sweep", |c| c.after_help(keys.clone()));
    let matches = match cmd.try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail(Failure::config(first));
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return fail(Failure::config(e.to_string().trim())),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{f}");
    ExitCode::from(f.kind.exit_code() as u8)
}
