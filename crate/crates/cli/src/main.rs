//! `nomen`: predict function names for stripped binaries from their
//! disassembly.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// How a run failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// A required argument is absent from both flags and config file (exit 1).
    MissingArg { command: String, arg: String },
    /// Unreadable or invalid input data (exit 2).
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "nomen", version, about = "Function-name prediction for stripped binaries")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Top-level seed; every random subsystem derives its seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accepted for compatibility: all reductions are already
    /// order-independent, so every run is deterministic.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct CorpusFilterArgs {
    /// Minimum instructions per function.
    #[arg(long)]
    min_len: Option<usize>,
    /// Maximum instructions per function.
    #[arg(long)]
    max_len: Option<usize>,
    /// Immediates with magnitude above this become IMM.
    #[arg(long)]
    imm_threshold: Option<u64>,
    /// Skip malformed listing records instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct NameArgs {
    /// Minimum project frequency for a vocabulary word.
    #[arg(long)]
    tau: Option<u64>,
    /// File with one excluded token per line.
    #[arg(long, value_name = "FILE")]
    stoplist: Option<PathBuf>,
    /// Names are truncated to this many tokens.
    #[arg(long)]
    max_name_tokens: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// `transformer` or `seq2seq`.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    max_src_len: Option<usize>,
    #[arg(long)]
    max_tgt_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Share the target embedding with the output projection.
    #[arg(long)]
    tie_embeddings: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Maximum epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// `constant`, `inverse_sqrt:<warmup>` or `step:<factor>:<every>`.
    #[arg(long)]
    schedule: Option<String>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    /// Score at most this many validation functions per epoch.
    #[arg(long)]
    val_limit: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic listing corpus.
    Synth {
        /// `toy`, `general` or `domain`.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Parse a listing, drop functions outside the length bounds and
    /// remove duplicate bodies.
    Ingest {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        filter: CorpusFilterArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Build the name vocabulary of a listing.
    BuildVocab {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        names: NameArgs,
        #[arg(long)]
        lenient: bool,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Normalize instructions (and names, given a vocabulary) of a listing.
    Normalize {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Name vocabulary TSV or dataset directory.
        #[arg(long, value_name = "PATH")]
        vocab: Option<PathBuf>,
        #[arg(long)]
        imm_threshold: Option<u64>,
        #[arg(long)]
        lenient: bool,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Build a dataset directory: filter, deduplicate, normalize names,
    /// split by package and build both vocabularies.
    Split {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        filter: CorpusFilterArgs,
        #[command(flatten)]
        names: NameArgs,
        /// Reuse vocabularies: a name vocabulary TSV, or a dataset
        /// directory whose name and instruction vocabularies are both kept.
        #[arg(long, value_name = "PATH")]
        vocab: Option<PathBuf>,
        /// Train, validation and test fractions, e.g. `0.8,0.1,0.1`.
        #[arg(long)]
        ratios: Option<String>,
        /// Minimum training-split count of an instruction token.
        #[arg(long)]
        min_freq: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train a model on a dataset's training split.
    Train {
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Split scored for early stopping: `validation` or `train`.
        #[arg(long)]
        validate_on: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Continue training a checkpoint on another dataset's training split.
    Finetune {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        /// Early-stop on the validation split instead of running every epoch.
        #[arg(long)]
        validate: bool,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Greedy-decode names for a dataset split or a raw listing.
    Predict {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR", conflicts_with = "corpus")]
        dataset: Option<PathBuf>,
        /// `train`, `validation` or `test`.
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        lenient: bool,
        /// Maximum predicted tokens.
        #[arg(long)]
        max_tgt_len: Option<usize>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Score predictions against a dataset split.
    Eval {
        /// JSON lines `{"id": .., "tokens": [..]}` or `{"id": .., "name": ..}`.
        #[arg(long, value_name = "FILE", conflicts_with = "random_baseline")]
        pred: Option<PathBuf>,
        /// Score frequency-weighted random predictions instead.
        #[arg(long)]
        random_baseline: bool,
        /// Reference dataset directory.
        #[arg(long, value_name = "DIR")]
        r#ref: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        /// TSV `id<TAB>group` for per-group averages.
        #[arg(long, value_name = "FILE")]
        groups: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Name statistics of a dataset split; writes `rank<TAB>token<TAB>frequency`.
    Stats {
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of tiny models.
    Gradcheck {
        /// `transformer`, `seq2seq` or `all`.
        #[arg(long)]
        arch: Option<String>,
        /// Number of seeds, starting at `--seed`.
        #[arg(long)]
        seeds: Option<u64>,
        /// Maximum accepted relative error.
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::BuildVocab { .. } => "build-vocab",
            Command::Normalize { .. } => "normalize",
            Command::Split { .. } => "split",
            Command::Train { .. } => "train",
            Command::Finetune { .. } => "finetune",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
            Command::Stats { .. } => "stats",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

fn usage_of(command: &str) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match cmd.find_subcommand_mut(command) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NOMEN_LOG", "warn")).init();
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let name = cli.command.name();
    let sub = matches.subcommand_matches(name).expect("subcommand matched");
    let mut def = Cli::command();
    def.build();
    let def = def.find_subcommand(name).expect("subcommand defined");
    match commands::run(def, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", usage_of(name));
            ExitCode::from(1)
        }
        Err(Failure::MissingArg { command, arg }) => {
            eprintln!("error: `{command}` needs `--{arg}` (flag or config file)\n\n{}", usage_of(&command));
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
