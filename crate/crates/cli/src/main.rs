//! Command-line entry point: dataset generation, network training, Monte
//! Carlo evaluation, single-run simulation and trace plotting. Every command
//! writes a manifest with its fully resolved configuration next to its
//! outputs; re-running with identical settings reproduces outputs
//! byte-for-byte (wall time aside), independent of the worker count.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};

/// Exit codes: 0 success, 2 usage/validation, 1 runtime failure.
const EXIT_VALIDATION: i32 = 2;
const EXIT_RUNTIME: i32 = 1;

#[derive(Parser)]
#[command(name = "psn-game", version, about = "Game-theoretic prediction and planning with player selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training dataset from full-game rollouts.
    GenData(commands::GenDataArgs),
    /// Train a goal-inference or player-selection network.
    Train(commands::TrainArgs),
    /// Benchmark selection methods in a paired Monte Carlo study.
    Eval(commands::EvalArgs),
    /// Run a single prediction or planning rollout and write its trace.
    Sim(commands::SimArgs),
    /// Render a trace file to SVG.
    Plot(commands::PlotArgs),
}

/// Errors that indicate bad input rather than a runtime failure.
fn is_validation_error(err: &anyhow::Error) -> bool {
    use psn_game::{GameError, HarnessError, IngestError, TrainError};
    for cause in err.chain() {
        if cause.downcast_ref::<GameError>().is_some()
            || cause.downcast_ref::<IngestError>().is_some()
        {
            return true;
        }
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return matches!(
                h,
                HarnessError::UnknownMethod(_)
                    | HarnessError::MissingParameter { .. }
                    | HarnessError::Parse(_)
                    | HarnessError::Game(_)
                    | HarnessError::Io(_)
                    | HarnessError::Ingest(_)
            );
        }
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return matches!(
                t,
                TrainError::ShapeMismatch(_) | TrainError::EmptyDataset | TrainError::Game(_)
            );
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return true;
        }
        if cause.downcast_ref::<ValidationError>().is_some() {
            return true;
        }
    }
    false
}

/// Wrapper marking CLI-level validation failures (missing files, bad flag
/// combinations).
#[derive(Debug)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ValidationError {}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Sim(args) => commands::sim(args),
        Command::Plot(args) => commands::plot(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        let code = if is_validation_error(&err) { EXIT_VALIDATION } else { EXIT_RUNTIME };
        std::process::exit(code);
    }
}
