//! `ffcount`: ground-truth generation, evaluation and toy training for
//! density-based object counting.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{evaluate::EvaluateArgs, synth_gt::SynthGtArgs, train_toy::TrainToyArgs};

#[derive(Debug, Parser)]
#[command(name = "ffcount", version, about)]
struct Cli {
    /// Seed for synthetic scenes and model initialization.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for per-image stages.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,

    /// Directory receiving all outputs; created if missing.
    #[arg(long, global = true, visible_alias = "out", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn annotations into density maps, segmentation masks and density levels.
    SynthGt(SynthGtArgs),
    /// Compare predicted density maps against ground truth.
    Evaluate(EvaluateArgs),
    /// Train the toy focus network on synthetic scenes.
    TrainToy(TrainToyArgs),
}

/// Settings shared by every command.
#[derive(Debug)]
pub struct Global {
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let global = Global {
        seed: cli.seed,
        threads: cli.threads as usize,
        out_dir: cli.out_dir,
    };
    let result = std::fs::create_dir_all(&global.out_dir)
        .map_err(|e| error::CliError::input(format!("{}: {e}", global.out_dir.display())))
        .and_then(|()| match cli.command {
            Command::SynthGt(args) => commands::synth_gt::run(&global, args),
            Command::Evaluate(args) => commands::evaluate::run(&global, args),
            Command::TrainToy(args) => commands::train_toy::run(&global, args),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
