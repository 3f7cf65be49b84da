//! `tmae` command-line tool.
//!
//! Exit codes: 0 success, 1 invalid input or configuration (including
//! unreadable or unwritable paths), 2 training aborted on a non-finite loss.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "tmae", version, about = "Patient embeddings from claims with a transformer autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchmarkKind {
    Conditions,
    CostTiers,
    Custom,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled synthetic dataset (claims, truth labels, categories, manifest).
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus its loss history.
    Train(TrainArgs),
    /// Write one patient embedding per record.
    Embed(EmbedArgs),
    /// k-means on embeddings, with optional elbow selection of k.
    Cluster(ClusterArgs),
    /// Per-cluster demographics and resource-use table.
    Report(ReportArgs),
    /// Finite-difference check of the joint loss gradient.
    Gradcheck(GradcheckArgs),
    /// Generate both tasks, train all variants, and compare against PCA.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub benchmark: BenchmarkKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON cohort list for `--benchmark custom`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Patients per condition cohort.
    #[arg(long, default_value_t = tmae::synth::DEFAULT_PER_COHORT)]
    pub n_per_cohort: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Claims JSONL; overrides `data.claims` in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "tmae")]
    pub variant: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Category map TSV; defaults to `categories.tsv` beside the data.
    #[arg(long)]
    pub categories: Option<PathBuf>,
    /// Loss history CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub categories: Option<PathBuf>,
    /// Accept data whose codes are a subset of the checkpoint vocabulary.
    #[arg(long)]
    pub allow_subset: bool,
}

#[derive(Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, conflicts_with = "elbow", required_unless_present = "elbow")]
    pub k: Option<usize>,
    #[arg(long, requires = "k_max")]
    pub elbow: bool,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for assignments, WSS curve, metrics and plot data.
    #[arg(long)]
    pub out: PathBuf,
    /// Truth labels TSV used for the plot-data label column.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub assignments: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = tmae::model::check::DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value = "tmae")]
    pub variant: String,
}

#[derive(Args)]
pub struct BenchmarkArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = tmae::synth::DEFAULT_PER_COHORT)]
    pub n_per_cohort: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Also write the table as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<tmae::Error>() {
        Some(tmae::Error::NonFiniteLoss { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Report(a) => commands::report(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
