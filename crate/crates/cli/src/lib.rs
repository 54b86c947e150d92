//! `ratnet` command-line experiments. Every command reads a TOML config,
//! writes its outputs under `--out`, and records a `run.toml` manifest with
//! the resolved config, all seeds and output checksums.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
pub mod config;
mod output;
mod report;

pub use output::RUN_MANIFEST;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or unreadable configuration; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Failure while running; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ratnet_core::Error> for CliError {
    fn from(e: ratnet_core::Error) -> Self {
        match e {
            ratnet_core::Error::InvalidConfig(_) | ratnet_core::Error::InvalidCategoryMap(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ratnet", version, about = "Relevance-knowledge acquisition and transfer experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// TOML config for the command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress progress and summary output.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark.
    Gen(Common),
    /// Cyclic multi-task pretraining with an EMA teacher.
    Pretrain(Common),
    /// Fine-tune a checkpoint on a new task.
    Finetune(Common),
    /// Linear probe on frozen embeddings, optionally over reduced training fractions.
    Probe(Common),
    /// Repeated k-shot linear probes.
    Fewshot(Common),
    /// Zero-shot transfer by relevance-weighted head aggregation.
    Zeroshot(Common),
    /// Add a task to a pretrained student/teacher pair.
    Increment(Common),
    /// Simulated federated pretraining.
    Federate(Common),
    /// Compare `runs.csv` files across run directories.
    Report {
        /// Run directories containing `runs.csv`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write fused embeddings and knowledge-base rows as TSV.
    ExportEmbeddings(Common),
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(c) => commands::gen(&c),
        Command::Pretrain(c) => commands::pretrain(&c),
        Command::Finetune(c) => commands::finetune(&c),
        Command::Probe(c) => commands::probe(&c),
        Command::Fewshot(c) => commands::fewshot(&c),
        Command::Zeroshot(c) => commands::zeroshot(&c),
        Command::Increment(c) => commands::increment(&c),
        Command::Federate(c) => commands::federate(&c),
        Command::Report { runs, common } => report::report(&runs, &common),
        Command::ExportEmbeddings(c) => commands::export_embeddings(&c),
    }
}

/// Parses `args` (including the program name), runs, and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
