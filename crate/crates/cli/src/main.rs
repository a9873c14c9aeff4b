//! `dasmon`: end-to-end pipeline driver.
//!
//! Stages read the previous stage's artifacts and write their own plus
//! a run manifest with checksums. Exit codes: 0 success, 2 validation
//! error (bad flags, malformed inputs), 1 runtime failure.

mod commands;
mod manifest;
#[cfg(feature = "png")]
mod render;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dasmon",
    version,
    about = "Synthetic fiber-sensing traffic scenes, preprocessing, features, recurrent+attention models, ablations and transfer evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic strain-rate scene with annotations.
    Simulate(commands::SimulateArgs),
    /// Detrend and band-pass a scene.
    Preprocess(commands::PreprocessArgs),
    /// Extract per-SP window features and pack model inputs.
    Featurize(commands::FeaturizeArgs),
    /// Train one architecture on a featurized scene.
    Train(commands::TrainArgs),
    /// Architecture/attention ablation with hyperparameter search.
    Ablate(commands::AblateArgs),
    /// Evaluate a trained model on another site's SP groups.
    Transfer(commands::TransferArgs),
    /// Export attention weights and per-frame probabilities.
    ExportAttention(commands::ExportAttentionArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Preprocess(args) => commands::preprocess(args),
        Command::Featurize(args) => commands::featurize(args),
        Command::Train(args) => commands::train(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Transfer(args) => commands::transfer(args),
        Command::ExportAttention(args) => commands::export_attention(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .downcast_ref::<dasmon::DasError>()
                .map(|e| e.is_validation())
                .unwrap_or(false);
            if validation {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
