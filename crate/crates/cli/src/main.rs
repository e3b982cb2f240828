//! `pamnet` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pamnet", version, about = "Multiplex graph networks for 3D molecular structures")]
pub struct Cli {
    /// JSON run configuration with optional `model`, `train`, `filter` and `split` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling, splits and random checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory that receives every output file.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub ablation: Ablation,
    #[command(subcommand)]
    pub command: Command,
}

/// Architecture switches applied to freshly initialized models.
#[derive(Debug, Clone, Copy, Default, Args)]
pub struct Ablation {
    /// Replace attention pooling by the plain mean of both plexes.
    #[arg(long, global = true)]
    pub no_attention_pool: bool,
    /// Drop the local plex.
    #[arg(long, global = true)]
    pub no_local_mp: bool,
    /// Drop the global plex.
    #[arg(long, global = true)]
    pub no_global_mp: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse structures, build their graphs and summarize the features.
    Featurize {
        /// Structure file or directory.
        data: PathBuf,
        /// Print every parsed structure as JSON on stdout.
        #[arg(long)]
        dump_json: bool,
    },
    /// Train a model and write its checkpoint and history.
    Train(TrainArgs),
    /// Score a checkpoint against labelled structures.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Write predictions for unlabelled structures as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output file; `-` writes to stdout. Defaults to `<out-dir>/predictions.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Per-molecule message counts and their averages.
    Profile {
        #[arg(long)]
        data: PathBuf,
        /// Use chemical bonds as the local plex.
        #[arg(long)]
        bonds: bool,
        #[arg(long)]
        d_global: Option<f64>,
        #[arg(long)]
        d_local: Option<f64>,
        /// Required mean PAMNet messages per molecule.
        #[arg(long)]
        expect_pamnet: Option<f64>,
        /// Required mean comparator messages per molecule.
        #[arg(long)]
        expect_comparator: Option<f64>,
        /// Relative tolerance of both expectations.
        #[arg(long, default_value_t = 0.25)]
        tolerance: f64,
    },
    /// Message counts over a range of global cutoffs.
    Sweep(SweepArgs),
    /// Check E(3) and permutation symmetry of a model's outputs.
    CheckSymmetry(SymmetryArgs),
    /// Average attention weights of both plexes.
    ReportAttention {
        /// Checkpoint to inspect; a fresh model is used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Largest accepted `|α_g + α_l − 1|`.
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training structures; split into train/valid/test unless `--valid-data` is given.
    #[arg(long, required_unless_present = "smoke")]
    pub data: Option<PathBuf>,
    #[arg(long, required_unless_present = "smoke")]
    pub labels: Option<PathBuf>,
    #[arg(long, requires = "valid_labels")]
    pub valid_data: Option<PathBuf>,
    #[arg(long)]
    pub valid_labels: Option<PathBuf>,
    /// Train on the synthetic overfit set with its reduced model and schedule.
    #[arg(long, conflicts_with_all = ["data", "valid_data"])]
    pub smoke: bool,
    /// Fail unless the final train MAE is below this value.
    #[arg(long)]
    pub expect_train_mae: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Structures to sweep; uniform random boxes are generated when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Global cutoffs in Å, increasing.
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,2.5,3,3.5,4")]
    pub d: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub boxes: usize,
    #[arg(long, default_value_t = 300)]
    pub box_atoms: usize,
    #[arg(long, default_value_t = 15.0)]
    pub box_side: f64,
    /// Local cutoff used while sweeping.
    #[arg(long, default_value_t = 0.5)]
    pub d_local: f64,
    /// Required comparator/global slope ratio.
    #[arg(long)]
    pub expect_ratio: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub ratio_tolerance: f64,
}

#[derive(Debug, Args)]
pub struct SymmetryArgs {
    /// Checkpoint to check; a fresh model is used when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Structures to transform; random molecules are generated when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub n_molecules: usize,
    #[arg(long, default_value_t = 100)]
    pub n_transforms: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 20)]
    pub n_permutations: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub permutation_tolerance: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
