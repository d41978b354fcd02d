mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vcpcfg::ErrorKind;

#[derive(Parser)]
#[command(name = "vcpcfg", version, about = "Visually grounded compound PCFG grammar induction")]
struct Cli {
    /// Worker threads for per-sentence parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    Left,
    Right,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes the checkpoint and epoch log to output_dir.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config value, e.g. --set alpha=0.01.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parse captions with a trained model, one bracketed tree per line.
    Parse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predicted trees against gold trees.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        /// Predicted trees; repeat for several runs to also get self-F1.
        #[arg(long = "pred")]
        preds: Vec<PathBuf>,
        /// Also score a branching baseline on the gold sentences.
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the CSV reports.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Finite-difference check of an objective on a seeded micro-batch.
    Gradcheck {
        #[arg(long, default_value = "joint")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Write a synthetic grounded corpus with gold trees and a config file.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        sentences: usize,
        #[arg(long, default_value_t = 200)]
        valid: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
        #[arg(long, default_value_t = 32)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 20)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be positive");
        return ExitCode::from(2);
    }
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().ok();
    let result = match cli.command {
        Command::Train { config, overrides } => commands::train(config.as_deref(), &overrides),
        Command::Parse { checkpoint, captions, output } => commands::parse(&checkpoint, &captions, &output),
        Command::Evaluate { gold, preds, baseline, seed, out_dir } => {
            commands::evaluate(&gold, &preds, baseline, seed, out_dir.as_deref())
        }
        Command::Gradcheck { scope, seed, corrupt_adjoint } => commands::gradcheck(&scope, seed, corrupt_adjoint),
        Command::Synth { out_dir, sentences, valid, test, feature_dim, noise, max_len, seed } => {
            commands::synth(&out_dir, sentences, valid, test, feature_dim, noise, max_len, seed)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
