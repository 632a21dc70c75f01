//! Optional JSON configuration file mirroring the command-line flags.
//! Keys are the flag names with dashes replaced by underscores, grouped by
//! subcommand; explicit flags always win over file values.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub quiet: Option<bool>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub crossval: CrossvalSection,
    #[serde(default)]
    pub predict: PredictSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub heatmap: HeatmapSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub patients: Option<usize>,
    pub patches: Option<usize>,
    pub dim: Option<usize>,
    pub archetypes: Option<usize>,
    pub tumor_min: Option<f64>,
    pub tumor_max: Option<f64>,
    pub censor_target: Option<f64>,
    pub hazard_scale: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub manifest: Option<PathBuf>,
    pub clusters: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub standardize: Option<bool>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub manifest: Option<PathBuf>,
    pub clusters: Option<usize>,
    pub layer_pairs: Option<usize>,
    pub pool: Option<String>,
    pub attention: Option<String>,
    pub no_siamese: Option<bool>,
    pub attention_hidden: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub min_delta: Option<f64>,
    pub batch_size: Option<usize>,
    pub val_frac: Option<f64>,
    pub standardize: Option<bool>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossvalSection {
    pub folds: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub model: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub model: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub tau: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapSection {
    pub model: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub patient: Option<Vec<String>>,
    pub tile: Option<u32>,
    pub page_width: Option<u32>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub models: Option<Vec<PathBuf>>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig, String> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| format!("bad config file {}: {e}", path.display()))
}

/// CLI value if given, else file value, else the built-in default.
pub fn pick<T>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

/// CLI value if given, else file value, else None.
pub fn pick_opt<T>(cli: Option<T>, file: Option<T>) -> Option<T> {
    cli.or(file)
}

/// CLI value if given, else file value, else a usage error naming the flag.
pub fn pick_required<T>(cli: Option<T>, file: Option<T>, flag: &str) -> Result<T, String> {
    cli.or(file)
        .ok_or_else(|| format!("missing required argument --{flag} (not in config file either)"))
}

/// Presence flags: true if set on the command line or in the file.
pub fn pick_flag(cli: bool, file: Option<bool>) -> bool {
    cli || file.unwrap_or(false)
}
