//! `ngramconv` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 configuration error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const DEFAULT_SEED: u64 = 1337;

#[derive(Parser, Debug)]
#[command(name = "ngramconv", version, about = "Convolutional sentiment classifiers and tag-based song annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Clean, tokenize and index a labeled dataset into a token-index file
    Preprocess(PreprocessArgs),
    /// Print the dimension and vocabulary size of a vector file
    EmbedInfo(EmbedInfoArgs),
    /// Train a network and write a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Train every point of a width/depth/region grid and write a CSV report
    Grid(GridArgs),
    /// Tf-idf logistic regression baseline
    Baseline(BaselineArgs),
    /// Label songs from their emotion tags
    Annotate(AnnotateArgs),
    /// Choose cluster terms with the highest intra-cluster similarity
    FolksonomyOpt(FolksonomyOptArgs),
    /// Summarize a grid CSV report
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct VectorArgs {
    /// Word vector file (`word v1 .. vd` per line)
    #[arg(long)]
    pub vectors: PathBuf,
    /// Read at most this many vectors
    #[arg(long)]
    pub vectors_limit: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct PreprocessArgs {
    /// Labeled dataset: `label<TAB>text` file or a directory with neg/ and pos/
    #[arg(long, alias = "data")]
    pub input: PathBuf,
    #[arg(long)]
    pub used_length: usize,
    #[command(flatten)]
    pub vectors: VectorArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EmbedInfoArgs {
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 60)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Labeled dataset or token-index file
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub vectors: VectorArgs,
    /// Architecture file (TOML)
    #[arg(long)]
    pub arch: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics JSON; defaults to `<out>.metrics.json`
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Dev,
    Test,
    All,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Vector file; defaults to the one recorded in the checkpoint
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Split seed; defaults to the training seed recorded in the checkpoint
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub vectors: VectorArgs,
    /// Grid file (TOML)
    #[arg(long)]
    pub spec_grid: PathBuf,
    /// CSV report to write
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Grid points trained in parallel
    #[arg(long, env = "NGRAMCONV_JOBS", default_value_t = 1)]
    pub jobs: usize,
    /// Fill the `seconds` column (makes the report run-dependent)
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum AnnotateMode {
    Quadrant,
    Binary,
}

#[derive(Args, Debug, Serialize)]
pub struct AnnotateArgs {
    /// Tag dump: `<song_id><TAB><tag>,<tag>,...` per line
    #[arg(long)]
    pub tags: PathBuf,
    #[arg(long, value_enum)]
    pub mode: AnnotateMode,
    /// Keep this many labeled songs in total, split evenly over the classes
    #[arg(long)]
    pub balance: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct FolksonomyOptArgs {
    /// Candidate pools (TOML `[[cluster]]` tables with `name` and `terms`)
    #[arg(long)]
    pub pools: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub size: usize,
    #[command(flatten)]
    pub vectors: VectorArgs,
    /// Write the selected clusters here as TOML
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Grid CSV report
    #[arg(long)]
    pub grid: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 3 } else { 2 })
        }
    }
}
