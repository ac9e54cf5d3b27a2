//! `scanpath-forge` — operator surface for the scanpath prediction stack.
//!
//! Subcommands: `synth`, `train`, `eval`, `compare`, `render`.
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric failure.

mod commands;
mod error;
mod png;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{compare, eval, render, synth, train};

#[derive(Parser)]
#[command(
    name = "scanpath-forge",
    version,
    about = "Scanpath prediction: synthesize datasets, train the adversarial model, evaluate, compare, render"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blob-world dataset with images and ground truth
    Synth(synth::SynthArgs),
    /// Run adversarial training, writing checkpoints and telemetry
    Train(train::TrainArgs),
    /// Evaluate a checkpoint: MultiMatch, NSS and Congruency per image
    Eval(eval::EvalArgs),
    /// Compare two scanpath files with MultiMatch
    Compare(compare::CompareArgs),
    /// Render a scanpath file as an SVG overlay
    Render(render::RenderArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => synth::run(args),
        Command::Train(args) => train::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Compare(args) => compare::run(args),
        Command::Render(args) => render::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
