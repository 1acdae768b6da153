//! `probekit` command-line tool.
//!
//! Exit status: 0 on success, 1 for usage or input errors, 2 when an
//! embedding provider or the filesystem fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use probekit::pipeline::PipelineError;
use probekit::{Mode, Split};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Failure(_) => 2,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_provider_or_io() {
            CliError::Failure(e.to_string())
        } else {
            CliError::User(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "probekit", version, about = "Linear probes on sentence embeddings of ETHICS utilitarianism pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the util_*.csv files and print per-split statistics, or
    /// write a synthetic data set.
    PrepareData(PrepareArgs),
    /// Fill the embedding cache for one provider and template.
    Embed(EmbedArgs),
    /// Run one experiment per requested k and print the result records.
    Run(RunArgs),
    /// Run a full grid described by a TOML config.
    Sweep(SweepArgs),
    /// Summaries and figure tables from a results file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ProviderArgs {
    /// synthetic, remote or file.
    #[arg(long, default_value = "synthetic")]
    provider: String,
    /// Model id sent to the provider and used as cache namespace.
    #[arg(long)]
    model: Option<String>,
    /// Embedding width; known remote models default to their registry width.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    utility_scale: Option<f64>,
    #[arg(long)]
    direction_seed: Option<u64>,
    /// Embeddings endpoint for the remote provider.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Embedding file (cache format) to merge into the cache.
    #[arg(long)]
    import: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding util_train.csv, util_test.csv and util_test_hard.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic train pairs when no --data is given.
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    /// Synthetic eval pairs when no --data is given.
    #[arg(long, default_value_t = 1000)]
    n_eval: usize,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write synthetic util_*.csv files here instead of reading --data.
    #[arg(long)]
    synthetic_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_eval: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Built-in template index or template file.
    #[arg(long, default_value = "0")]
    template: String,
    /// Split to embed; all available splits when omitted.
    #[arg(long)]
    split: Option<Split>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    cache_dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Built-in template index or template file.
    #[arg(long, default_value = "0")]
    template: String,
    #[arg(long, default_value = "single")]
    mode: Mode,
    /// Comma-separated component counts.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation split: test or test_hard.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Replace labels with coin flips (null control).
    #[arg(long)]
    null_labels: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Directory for results.jsonl, artifacts and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include wall time in the records.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `cache_dir` from the config.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Overrides `max_parallel` from the config.
    #[arg(long)]
    max_parallel: Option<usize>,
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Results file written by `run` or `sweep`.
    #[arg(long)]
    results: PathBuf,
    /// Figure kind, or `all` for every kind the table supports.
    #[arg(long, default_value = "all")]
    kind: String,
    /// Comma-separated summary keys: family, model, template, mode, k.
    #[arg(long, value_delimiter = ',', default_value = "family,mode,k")]
    group_by: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::PrepareData(a) => commands::prepare_data(a),
        Command::Embed(a) => commands::embed(a),
        Command::Run(a) => commands::run(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
