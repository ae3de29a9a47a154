//! Command-line harness: taxonomy validation, batch evaluation, reward
//! computation, prompt packs and toy GRPO runs.
//!
//! Every command is a plain function from parsed arguments to output text so
//! the test suites can drive it without spawning a process.

pub mod commands;
pub mod config;
pub mod prompts;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::{HarnessConfig, ProviderSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io { .. } | CliError::Config(_) | CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into().display().to_string(),
            message: source.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SemNorm {
    /// Divide matched sums by r * t.
    Paper,
    /// Divide matched sums by max(r, t).
    Balanced,
}

#[derive(Debug, Parser)]
#[command(
    name = "vau-eval",
    version,
    about = "Scores structured answers for video-anomaly tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a taxonomy, check every structural rule and print level counts.
    ValidateTaxonomy(ValidateArgs),
    /// Score predictions against ground truth and write a per-task report.
    Eval(EvalArgs),
    /// Compute rewards and group advantages for sampled completions.
    Reward(RewardArgs),
    /// Write a prompt pack for every sample built from ground truth.
    Prompts(PromptArgs),
    /// Run a toy GRPO training loop over enumerated candidates.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// hash | file:PATH | remote:URL
    #[arg(long, default_value = "hash")]
    pub provider: String,
    #[arg(long, default_value_t = vau_core::embed::DEFAULT_DIMS)]
    pub dims: usize,
    #[arg(long, default_value_t = vau_core::metrics::DEFAULT_EVAL_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = vau_core::rewards::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = SemNorm::Paper)]
    pub sem_norm: SemNorm,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub gt: PathBuf,
    /// Comma-separated task ids; all tasks when omitted.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<vau_core::TaskId>,
    /// Include labeled normal triplets in anomaly-td ground truth.
    #[arg(long)]
    pub td_include_normal: bool,
    /// Anticipation prefix end in seconds (default: end of the earliest instance).
    #[arg(long)]
    pub anticipation_boundary: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub samples: SampleArgs,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write one JSON line of scores per sample.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RewardArgs {
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub samples: SampleArgs,
    /// JSON Lines of {"prompt_id", "response"}.
    #[arg(long)]
    pub completions: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[command(flatten)]
    pub samples: SampleArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Needed only for event-bearing tasks.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, default_value = "hash")]
    pub provider: String,
    #[arg(long, default_value_t = vau_core::embed::DEFAULT_DIMS)]
    pub dims: usize,
    #[arg(long, default_value_t = vau_core::rewards::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = SemNorm::Paper)]
    pub sem_norm: SemNorm,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub sft_steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sft_lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.9)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.04)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Trace file (JSON Lines); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Output of one command: the primary document plus non-fatal warnings.
#[derive(Debug, Default)]
pub struct Outcome {
    pub output: String,
    /// Printed to stdout even when `output` goes to a file.
    pub summary: Option<String>,
    pub warnings: Vec<String>,
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::ValidateTaxonomy(a) => commands::validate_taxonomy(a),
        Command::Eval(a) => commands::eval(a),
        Command::Reward(a) => commands::reward(a),
        Command::Prompts(a) => commands::prompts(a),
        Command::Simulate(a) => commands::simulate(a),
    }
}

fn out_path(cli: &Cli) -> Option<&PathBuf> {
    match &cli.command {
        Command::ValidateTaxonomy(a) => a.out.as_ref(),
        Command::Eval(a) => a.out.as_ref(),
        Command::Reward(a) => a.out.as_ref(),
        Command::Prompts(a) => a.out.as_ref(),
        Command::Simulate(a) => a.out.as_ref(),
    }
}

/// Runs a command, writes its output and returns the process exit code.
pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let outcome = match execute(cli) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let written = match out_path(cli) {
        Some(path) => std::fs::write(path, &outcome.output).map_err(|e| CliError::io(path, e)),
        None => stdout
            .write_all(outcome.output.as_bytes())
            .map_err(|e| CliError::io("<stdout>", e)),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: {e}");
        return e.exit_code();
    }
    if let Some(summary) = &outcome.summary {
        let _ = writeln!(stdout, "{summary}");
    }
    for w in &outcome.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    if outcome.warnings.is_empty() {
        0
    } else {
        1
    }
}
