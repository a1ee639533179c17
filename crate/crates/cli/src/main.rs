//! `gcblane`: data preparation, training, fine-tuning, evaluation,
//! prediction, gradient checks and ablations from one binary.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcblane_core::model::Variant;
use gcblane_core::Error;

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  other failure (including failed gradient checks)
  2  I/O error (missing or unreadable file)
  3  invalid configuration or checkpoint/config mismatch
  4  training diverged (best checkpoint so far is still written)
  5  metric undefined because the split has a single class";

#[derive(Parser, Debug)]
#[command(name = "gcblane", version, about = "Binding site prediction from sequence and de Bruijn graphs", after_help = EXIT_CODES)]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "GCBLANE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pair positives with shuffled negatives, split them and cache graphs.
    Prepare(PrepareArgs),
    /// Write FASTA positives with a planted motif.
    Synth(SynthArgs),
    /// Train a model from scratch on one or more pooled manifests.
    Train(TrainArgs),
    /// Continue training a checkpoint on one dataset.
    Finetune(TrainArgs),
    /// Score a split and write metric reports.
    Evaluate(EvaluateArgs),
    /// Write class probabilities for every record of a FASTA file.
    Predict(PredictArgs),
    /// Finite-difference check of every layer's gradients.
    Gradcheck(GradcheckArgs),
    /// Train and test the full model and both single-branch variants.
    Ablation(TrainArgs),
    /// Grid search over learning rate, optimizer and batch size.
    Grid(GridArgs),
    /// Layer output shapes and parameter counts.
    Summary(SummaryArgs),
    /// Print the de Bruijn graph of one sequence as JSON.
    GraphDump(GraphDumpArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub positives: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 101)]
    pub len: usize,
    #[arg(long, default_value = "TATAAT")]
    pub motif: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest; repeat to pool several.
    #[arg(long)]
    pub manifest: Vec<PathBuf>,
    /// Parent checkpoint (finetune).
    #[arg(long)]
    pub checkpoint_in: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the pooling auxiliary losses (0 disables them).
    #[arg(long)]
    pub aux_weight: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub fasta: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Number of random seeds per layer.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = gcblane_core::autodiff::DEFAULT_TOL)]
    pub tol: f64,
    /// Write the results as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.001, 0.0001])]
    pub lrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values = ["adam", "rmsprop", "sgd"])]
    pub optimizers: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128, 256])]
    pub batch_sizes: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct SummaryArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Input length used for the shape trace.
    #[arg(long, default_value_t = 101)]
    pub len: usize,
}

#[derive(Args, Debug)]
pub struct GraphDumpArgs {
    pub sequence: String,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
}

/// Stable process exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        Error::Config(_) | Error::Checkpoint(_) => 3,
        Error::Divergence(_) => 4,
        Error::UndefinedMetric(_) => 5,
        Error::Layer { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
