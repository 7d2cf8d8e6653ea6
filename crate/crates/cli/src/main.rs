mod ablate;
mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use config::{ConfigError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "biobridge", version, about = "Bilingual emergency triage classifier")]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the top-level `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, tokenizer text and embedding table.
    Synth,
    /// Expand abbreviations, normalize spacing and split the corpus.
    Preprocess,
    /// Print character statistics of the raw corpus.
    Stats,
    /// Train the WordPiece vocabulary.
    TrainVocab,
    /// Train the encoder and save the best dev checkpoint.
    Train,
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// TF-IDF plus logistic regression on the same splits.
    Baseline,
    /// Train every combination of bridging and bio-embedding over the seeds.
    Ablate,
    /// synth, preprocess, train-vocab, train and evaluate in one go.
    Pipeline,
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<ConfigError>().is_some()
            || matches!(c.downcast_ref::<biobridge::Error>(), Some(biobridge::Error::Config(_)))
    })
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &ov)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg)?,
        Command::Preprocess => commands::preprocess(&cfg)?,
        Command::Stats => commands::stats(&cfg)?,
        Command::TrainVocab => commands::train_vocab(&cfg)?,
        Command::Train => commands::cmd_train(&cfg)?,
        Command::Evaluate { checkpoint, split } => {
            commands::cmd_evaluate(&cfg, checkpoint.as_deref(), &split)?
        }
        Command::Baseline => commands::cmd_baseline(&cfg)?,
        Command::Ablate => return ablate::cmd_ablate(&cfg),
        Command::Pipeline => commands::cmd_pipeline(&cfg)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            error!("some runs failed; the report is partial");
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
