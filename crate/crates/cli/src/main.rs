//! `csc` — corpus engineering and verification for compression-rate
//! conditioned cross-lingual summarization.
//!
//! Exit codes: 0 success, 1 input/usage error, 2 internal error.

mod cmds;
mod cfg;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable/malformed inputs, config violations.
    Input(String),
    /// Bugs and broken internal invariants.
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

macro_rules! input_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}

input_error_from!(
    csc_core::CorpusError,
    csc_core::MetricError,
    csc_core::AugmentError,
    csc_core::SynthError,
    csc_core::BinError,
    csc_core::model::ModelError,
    std::io::Error
);

#[derive(Parser, Debug)]
#[command(name = "csc", version, about = "Compression-rate summarization toolkit")]
pub struct Cli {
    /// TOML config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global RNG seed (precedence: flag > config file > $CSC_SEED > 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Compression-rate bin width in (0, 1].
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Worker count for sample-parallel subcommands.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Tokenizer scheme: whitespace | whitespace_cjk.
    #[arg(long, global = true)]
    tokenizer: Option<String>,
    /// Plain-text merges table; switches tokenization to subword mode.
    #[arg(long, global = true)]
    merges: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Prune documents toward higher compression rates along a target schedule.
    Augment(cmds::AugmentArgs),
    /// Per-bin histogram of corpus compression rates.
    Stats(cmds::StatsArgs),
    /// ROUGE or BLEU between system and reference files.
    Score(cmds::ScoreArgs),
    /// Generate a synthetic salience-translation corpus.
    Synth(cmds::SynthArgs),
    /// Train the toy conditioned transformer.
    Train(cmds::TrainArgs),
    /// Decode a corpus with a trained model.
    Generate(cmds::GenerateArgs),
    /// Per-bin controllability report for a trained model.
    Sweep(cmds::SweepArgs),
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version; usage problems exit 1.
            if e.use_stderr() {
                eprintln!("{e}");
                return Err(CliError::Input("invalid usage".into()));
            }
            print!("{e}");
            return Ok(());
        }
    };
    let tool = cfg::ToolConfig::resolve(&cli)?;
    tool.log_effective();
    match &cli.command {
        Command::Augment(args) => cmds::augment(args, &tool),
        Command::Stats(args) => cmds::stats(args, &tool),
        Command::Score(args) => cmds::score(args),
        Command::Synth(args) => cmds::synth(args, &tool),
        Command::Train(args) => cmds::train(args, &tool),
        Command::Generate(args) => cmds::generate(args, &tool),
        Command::Sweep(args) => cmds::sweep(args, &tool),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Input(_)) => {
            eprintln!("csc: {e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Internal(_)) => {
            eprintln!("csc: {e}");
            ExitCode::from(2)
        }
    }
}
