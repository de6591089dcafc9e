//! `coe`: world generation, training, evaluation, attention analysis and
//! ablations over the symbolic event world.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AblateArgs, AttentionArgs, EvalArgs, TrainArgs, WorldGenArgs};

#[derive(Debug, Parser)]
#[command(name = "coe", version, about = "Chain-of-events training on a symbolic event world")]
struct Cli {
    /// Output directory. Defaults to `$COE_RUN_DIR/<command>`, else
    /// `runs/<command>`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a task dataset as JSONL.
    WorldGen(WorldGenArgs),
    /// Fine-tune, then optimize with group-relative policy optimization.
    Train(TrainArgs),
    /// Held-out MCQ accuracy, or the open-set judge over several checkpoints.
    Eval(EvalArgs),
    /// Visual-attention win rate and improvement of one checkpoint over another.
    Attention(AttentionArgs),
    /// One train and eval per value of an ablation axis.
    Ablate(AblateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::WorldGen(_) => "world-gen",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Attention(_) => "attention",
            Command::Ablate(_) => "ablate",
        }
    }
}

fn resolve_run_dir(explicit: Option<PathBuf>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| match std::env::var_os("COE_RUN_DIR") {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
        _ => PathBuf::from("runs").join(command),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let run_dir = resolve_run_dir(cli.run_dir, cli.command.name());
    let result = match cli.command {
        Command::WorldGen(a) => commands::world_gen(&run_dir, a),
        Command::Train(a) => commands::train(&run_dir, a),
        Command::Eval(a) => commands::eval(&run_dir, a),
        Command::Attention(a) => commands::attention(&run_dir, a),
        Command::Ablate(a) => commands::ablate(&run_dir, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
