mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attnmisl::ErrorCategory;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "attnmisl",
    about = "Multiple-instance survival learning on whole-slide patch features",
    version
)]
struct Cli {
    /// Seed for every random choice (splits, clustering, initialization).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    /// JSON file mirroring the flags; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort (manifest, feature files, ground truth).
    Synth(SynthArgs),
    /// Cluster each patient's patches into phenotypes and export labels.
    Cluster(ClusterArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// K-fold cross-validation; emits a JSON fold table.
    Crossval(CrossvalArgs),
    /// Score a manifest with a trained model.
    Predict(PredictArgs),
    /// Survival evaluation: C-index, AUC, Kaplan-Meier curves, log-rank.
    Evaluate(EvaluateArgs),
    /// Attention heatmaps (CSV + SVG) for patients of a manifest.
    Heatmap(HeatmapArgs),
    /// Average predictions of several checkpoints over a manifest.
    Ensemble(EnsembleArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    archetypes: Option<usize>,
    /// Lower end of the tumor fraction range.
    #[arg(long)]
    tumor_min: Option<f64>,
    /// Upper end of the tumor fraction range.
    #[arg(long)]
    tumor_max: Option<f64>,
    /// Approximate fraction of censored patients.
    #[arg(long)]
    censor_target: Option<f64>,
    /// Exponent of the hazard in the tumor fraction.
    #[arg(long)]
    hazard_scale: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Maximum number of phenotype clusters per patient.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Z-score features per patient before clustering.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<usize>,
    /// Encoder depth: 1, 2 or 3 conv-ReLU pairs.
    #[arg(long)]
    layer_pairs: Option<usize>,
    /// Instance pooling: avg or max.
    #[arg(long)]
    pool: Option<String>,
    /// Attention kind: plain, gated or uniform.
    #[arg(long)]
    attention: Option<String>,
    /// Ablation: ignore clusters, pool attention over raw patches.
    #[arg(long)]
    no_siamese: bool,
    /// Attention hidden width L.
    #[arg(long)]
    attention_hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    min_delta: Option<f64>,
    /// Mini-batch size; omit for full-batch training.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fraction of the manifest carved out as the validation set.
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    standardize: bool,
    /// Checkpoint path to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Number of folds.
    #[arg(long)]
    folds: Option<usize>,
    /// JSON report path; stdout when omitted.
    #[arg(long = "report", value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Risk table CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// AUC horizon in days; defaults to the median observed time.
    #[arg(long)]
    tau: Option<f64>,
    /// Output directory for evaluation.json and the KM curve CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Patient ids to export; all patients when omitted.
    #[arg(long)]
    patient: Vec<String>,
    /// Tile edge length in slide pixels.
    #[arg(long)]
    tile: Option<u32>,
    /// SVG page width in pixels.
    #[arg(long)]
    page_width: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    /// Checkpoints to average.
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let file = match config::load_file_config(cli.config.as_deref()) {
        Ok(file) => file,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let seed = config::pick(cli.seed, file.seed, 42);
    let quiet = config::pick_flag(cli.quiet, file.quiet);

    let outcome = match cli.command {
        Command::Synth(args) => commands::run_synth(args, &file, seed, quiet),
        Command::Cluster(args) => commands::run_cluster(args, &file, seed, quiet),
        Command::Train(args) => commands::run_train(args, &file, seed, quiet),
        Command::Crossval(args) => commands::run_crossval(args, &file, seed, quiet),
        Command::Predict(args) => commands::run_predict(args, &file, quiet),
        Command::Evaluate(args) => commands::run_evaluate(args, &file, quiet),
        Command::Heatmap(args) => commands::run_heatmap(args, &file, quiet),
        Command::Ensemble(args) => commands::run_ensemble(args, &file, quiet),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(commands::CliError::Core(e)) => {
            eprintln!("error: {e}");
            match e.category() {
                ErrorCategory::Data => ExitCode::from(EXIT_DATA),
                ErrorCategory::Numerical => ExitCode::from(EXIT_NUMERICAL),
            }
        }
    }
}
