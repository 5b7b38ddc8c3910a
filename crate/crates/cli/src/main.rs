//! `ranksurge`: rank dataset generation, ranker and SR training, evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Profile;

#[derive(Parser, Debug)]
#[command(name = "ranksurge", version, about = "Rank-content loss super-resolution pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Defaults profile; overrides the file's `profile` key.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Root seed; overrides the file's `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker cap; overrides the file's `workers` key.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a rank dataset from per-method SR corpora.
    Rankgen(commands::RankgenArgs),
    /// Train a Siamese ranker on a rank dataset.
    TrainRanker(commands::TrainRankerArgs),
    /// Train the GAN super-resolution model.
    TrainSr(commands::TrainSrArgs),
    /// Score SR corpora into a benchmark table.
    Evaluate(commands::EvaluateArgs),
    /// Single-method and per-image-best bounds from two score files.
    Bounds(commands::BoundsArgs),
    /// Convergence plots and summary from a training log.
    Curves(commands::CurvesArgs),
    /// Comparison table against a baseline run.
    Ablation(commands::AblationArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Rankgen(a) => commands::rankgen(&cli.common, a),
        Command::TrainRanker(a) => commands::train_ranker(&cli.common, a),
        Command::TrainSr(a) => commands::train_sr(&cli.common, a),
        Command::Evaluate(a) => commands::evaluate(&cli.common, a),
        Command::Bounds(a) => commands::bounds(&cli.common, a),
        Command::Curves(a) => commands::curves(&cli.common, a),
        Command::Ablation(a) => commands::ablation(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}
