//! `tagdistill` command line: manifests in, JSON lines and TTDT tensors out.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tagdistill::adapter::AdapterSharing;
use tagdistill::distill::Reduction;
use tagdistill::{ScoreMethod, SelectionMode};

#[derive(Debug, Parser)]
#[command(
    name = "tagdistill",
    version,
    about = "Pixel-tag scoring, pseudo-tag selection and self-distillation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON-lines sample manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Directory for TTDT artifacts and checkpoints.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Tag scorer: image, text, pixel or seg.
    #[arg(long, global = true, default_value = "pixel")]
    pub method: ScoreMethod,
    /// `gap` or `threshold:<value>`.
    #[arg(long, global = true, default_value = "gap")]
    pub selection: SelectionMode,
    /// Foreground threshold for similarity maps.
    #[arg(long, global = true, default_value_t = 0.5)]
    pub binarize_threshold: f64,
    /// Per-pixel loss reduction: sum or mean.
    #[arg(long, global = true, default_value = "sum")]
    pub reduction: Reduction,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Checkpoint directory whose adapter is applied to every sample first.
    #[arg(long, global = true)]
    pub adapter: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every candidate tag of every sample.
    Score,
    /// Select pseudo-tags per sample.
    Select,
    /// Write the union of selected tags' normalized maps as <id>.pseudolabel.ttdt.
    Pseudolabel,
    /// Distillation and tag losses per sample.
    Loss,
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
    },
    /// Train a low-rank adapter and write a checkpoint plus train_log.csv.
    Train(TrainArgs),
    /// Tag precision, recall, F1, accuracy and mAP against gt_tags.
    EvalTags {
        /// JSON lines with `sample_id` and `selected`; defaults to running selection.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Caption IoU, mFPR, mFNR and tag-level mIoU against ground-truth masks.
    EvalSeg {
        #[arg(long, default_value_t = 0.5)]
        background_threshold: f64,
    },
    /// Keep samples whose image-text similarity exceeds mean + std.
    Prune,
    /// Write a seeded synthetic fixture and its manifest to --out.
    Synth {
        #[arg(long, default_value_t = 10)]
        samples: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// How per-sample losses combine within a batch: sum or mean.
    #[arg(long, default_value = "sum")]
    pub batch_reduction: Reduction,
    #[arg(long, value_enum, default_value = "shared")]
    pub sharing: Sharing,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Sharing {
    Shared,
    PerBranch,
}

impl From<Sharing> for AdapterSharing {
    fn from(s: Sharing) -> Self {
        match s {
            Sharing::Shared => AdapterSharing::Shared,
            Sharing::PerBranch => AdapterSharing::PerBranch,
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

impl From<tagdistill::Error> for Failure {
    fn from(e: tagdistill::Error) -> Self {
        match e {
            tagdistill::Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<tagdistill::IoError> for Failure {
    fn from(e: tagdistill::IoError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.global.jobs;
    match tagdistill::par::with_jobs(jobs, || commands::run(&cli)) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            let (Failure::Config(msg) | Failure::Data(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
