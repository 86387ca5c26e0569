//! The `longfilter` command-line tool.
//!
//! Every command reads one TOML config (see [`PipelineConfig`]); the common
//! flags and their `LONGFILTER_*` environment variables override it. Outputs
//! go to the configured output directory:
//!
//! | file | written by | contents |
//! |---|---|---|
//! | `model.json` | `fit` | fitted built-in model |
//! | `resolved.toml` | `score` | fully resolved config |
//! | `sequences.jsonl` | `score` | packed sequence layout |
//! | `scores.jsonl` | `score` | one [`ScoreRecord`] per sequence |
//! | `tokens/<seq_id>.json` | `score` | per-token sidecar |
//! | `manifest.jsonl` | `select` | ranked selection manifest |
//! | `mixture.jsonl` | `select` | long/short training schedule |
//! | `report/<seq_id>.*` | `report` | heatmap, per-token records, series |
//!
//! [`ScoreRecord`]: longfilter::records::ScoreRecord

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use longfilter::config::PipelineConfig;

pub mod commands;
pub mod workspace;

#[derive(Debug, Parser)]
#[command(name = "longfilter", version, about = "Select long-context training data by context information gain")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, env = "LONGFILTER_CONFIG")]
    pub config: Option<PathBuf>,
    /// Scoring worker threads.
    #[arg(long, global = true, env = "LONGFILTER_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, global = true, env = "LONGFILTER_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "LONGFILTER_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the built-in model on the configured corpus.
    Fit,
    /// Score every packed sequence; resumes an interrupted run.
    Score(ScoreArgs),
    /// Rank scored sequences and compose the training mixture.
    Select,
    /// Render token heatmaps from per-token sidecars.
    Report(ReportArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Serve the built-in model over the logprob protocol until interrupted.
    MockServe(ServeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScoreArgs {
    /// Write per-token sidecars (overrides `scoring.sidecars`).
    #[arg(long)]
    pub sidecars: bool,
    /// Score against a remote server (overrides the `[backend]` section).
    #[arg(long, env = "LONGFILTER_ENDPOINT")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReportArgs {
    /// Sequences to render.
    pub seq_ids: Vec<String>,
    /// Render every sequence that has a sidecar.
    #[arg(long, conflicts_with = "seq_ids")]
    pub all: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Markov,
    Recall,
    Repeat,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// JSON object overriding spec fields, e.g. '{"length":4096}'.
    #[arg(long)]
    pub spec: Option<String>,
    /// Output file; defaults to `<out>/synth-<kind>.jsonl`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Model file; defaults to the configured model path.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8088")]
    pub bind: String,
}

/// Exit status for a run that completed but had failed records.
pub const EXIT_PARTIAL: u8 = 1;
/// Exit status for a run that stopped on an error.
pub const EXIT_ERROR: u8 = 2;

/// Loads the config file (or defaults) and applies flag overrides.
pub fn load_config(common: &CommonArgs) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = common.workers {
        config.workers = w;
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    config.validate().context("invalid configuration")?;
    Ok(config)
}

/// Runs one command. `Ok(false)` means the command finished but some
/// records or sequences failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let config = load_config(&cli.common)?;
    match &cli.command {
        Command::Fit => commands::fit::run(&config),
        Command::Score(args) => commands::score::run(config, args),
        Command::Select => commands::select::run(&config),
        Command::Report(args) => commands::report::run(&config, args),
        Command::Synth(args) => commands::synth::run(&config, args),
        Command::MockServe(args) => commands::serve::run(&config, args),
    }
}

pub fn exit_code(result: &Result<bool>) -> ExitCode {
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_PARTIAL),
        Err(_) => ExitCode::from(EXIT_ERROR),
    }
}

#[cfg(test)]
mod tests;
