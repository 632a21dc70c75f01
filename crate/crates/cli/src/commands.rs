use std::path::{Path, PathBuf};

use serde::Serialize;

use attnmisl::cluster::{kmeans_cluster, ClusterConfig};
use attnmisl::data::{
    generate_synthetic_cohort, load_manifest, save_manifest, save_patient_features,
    carve_validation, Cohort, ManifestEntry, SyntheticConfig,
};
use attnmisl::fmt_float;
use attnmisl::heatmap::{heatmap_export, DEFAULT_TILE_EDGE};
use attnmisl::metrics::{
    concordance_index, kaplan_meier, log_rank_test, median_risk_split, survival_auc, KMCurve,
    LogRankResult, RiskGroup,
};
use attnmisl::model::{load_checkpoint, AttentionKind, Checkpoint, InstancePool, ModelConfig};
use attnmisl::scoring::{risk_table, score_cohort, write_risk_table};
use attnmisl::train::{
    cross_validate, ensemble_score_bag, train_with_logger, TrainConfig, TrainedModel,
};
use attnmisl::Error;

use crate::config::{pick, pick_flag, pick_opt, pick_required, FileConfig};
use crate::{
    ClusterArgs, CrossvalArgs, EnsembleArgs, EvaluateArgs, HeatmapArgs, PredictArgs, SynthArgs,
    TrainArgs,
};

pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<String> for CliError {
    fn from(message: String) -> Self {
        CliError::Usage(message)
    }
}

type CliResult = Result<(), CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

/// File-system safe version of a patient id.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn lower_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    sorted[sorted.len().div_ceil(2) - 1]
}

pub fn run_synth(args: SynthArgs, file: &FileConfig, seed: u64, quiet: bool) -> CliResult {
    let section = &file.synth;
    let out = pick_required(args.out, section.out.clone(), "out")?;
    let config = SyntheticConfig {
        n_patients: pick(args.patients, section.patients, 50),
        patches_per_patient: pick(args.patches, section.patches, 100),
        feature_dim: pick(args.dim, section.dim, 16),
        n_archetypes: pick(args.archetypes, section.archetypes, 4),
        tumor_fraction_range: (
            pick(args.tumor_min, section.tumor_min, 0.0),
            pick(args.tumor_max, section.tumor_max, 1.0),
        ),
        censor_target: pick(args.censor_target, section.censor_target, 0.3),
        hazard_scale: pick(args.hazard_scale, section.hazard_scale, 2.0),
        seed,
    };

    let synthetic = generate_synthetic_cohort(&config)?;
    create_dir(&out)?;
    let feature_dir = out.join("features");
    create_dir(&feature_dir)?;

    let mut entries = Vec::new();
    for bag in synthetic.cohort.patients() {
        let file_name = format!("{}.amf", sanitize(bag.patient_id()));
        save_patient_features(
            feature_dir.join(&file_name),
            bag.patient_id(),
            bag.features(),
            bag.coords(),
        )?;
        entries.push(ManifestEntry {
            patient_id: bag.patient_id().to_string(),
            feature_path: PathBuf::from("features").join(file_name),
            label: bag.label(),
        });
    }
    save_manifest(out.join("manifest.csv"), &entries)?;

    let truth_path = out.join("ground_truth.csv");
    let mut truth = String::from("patient_id,tumor_fraction\n");
    for (bag, f) in synthetic
        .cohort
        .patients()
        .iter()
        .zip(&synthetic.ground_truth_risk)
    {
        truth.push_str(&format!("{},{}\n", bag.patient_id(), fmt_float(*f)));
    }
    std::fs::write(&truth_path, truth).map_err(|e| io_error(&truth_path, e))?;

    if !quiet {
        println!(
            "wrote {} patients ({} events) to {}",
            synthetic.cohort.n_patients(),
            synthetic.cohort.event_count(),
            out.display()
        );
    }
    Ok(())
}

pub fn run_cluster(args: ClusterArgs, file: &FileConfig, seed: u64, quiet: bool) -> CliResult {
    let section = &file.cluster;
    let manifest = pick_required(args.manifest, section.manifest.clone(), "manifest")?;
    let out = pick_required(args.out, section.out.clone(), "out")?;
    let config = ClusterConfig {
        k: pick(args.clusters, section.clusters, 6),
        seed,
        max_iter: pick(args.max_iter, section.max_iter, 100),
        tol: pick(args.tol, section.tol, 1e-4),
        standardize: pick_flag(args.standardize, section.standardize),
    };

    let cohort = load_manifest(&manifest)?;
    create_dir(&out)?;
    for bag in cohort.patients() {
        let assignment = kmeans_cluster(bag, &config)?;
        let mut csv = String::from("patch_index,slide_index,x,y,cluster\n");
        for (i, coord) in bag.coords().iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                i, coord.slide_index, coord.x, coord.y, assignment.labels[i]
            ));
        }
        let path = out.join(format!("{}.csv", sanitize(bag.patient_id())));
        std::fs::write(&path, csv).map_err(|e| io_error(&path, e))?;
    }
    if !quiet {
        println!(
            "clustered {} patients into at most {} phenotypes each",
            cohort.n_patients(),
            config.k
        );
    }
    Ok(())
}

struct TrainSetup {
    cohort: Cohort,
    model_config: ModelConfig,
    train_config: TrainConfig,
    cluster_config: ClusterConfig,
    val_frac: f64,
    out: Option<PathBuf>,
}

fn resolve_train(args: TrainArgs, file: &FileConfig, seed: u64) -> Result<TrainSetup, CliError> {
    let section = &file.train;
    let manifest = pick_required(args.manifest, section.manifest.clone(), "manifest")?;
    let cohort = load_manifest(&manifest)?;

    let pool = match pick(args.pool, section.pool.clone(), "avg".into()).as_str() {
        "avg" => InstancePool::Average,
        "max" => InstancePool::Max,
        other => return Err(format!("--pool must be avg or max, got `{other}`").into()),
    };
    let attention = match pick(args.attention, section.attention.clone(), "plain".into()).as_str()
    {
        "plain" => AttentionKind::Plain,
        "gated" => AttentionKind::Gated,
        "uniform" => AttentionKind::Uniform,
        other => {
            return Err(format!(
                "--attention must be plain, gated or uniform, got `{other}`"
            )
            .into())
        }
    };

    let mut model_config = ModelConfig::new(cohort.feature_dim());
    model_config.layer_pairs = pick(args.layer_pairs, section.layer_pairs, 1);
    model_config.instance_pool = pool;
    model_config.attention_kind = attention;
    model_config.attention_hidden = pick(args.attention_hidden, section.attention_hidden, 64);
    model_config.siamese = !pick_flag(args.no_siamese, section.no_siamese);

    let defaults = TrainConfig::default();
    let train_config = TrainConfig {
        learning_rate: pick(args.lr, section.lr, defaults.learning_rate),
        weight_decay: pick(args.weight_decay, section.weight_decay, defaults.weight_decay),
        max_epochs: pick(args.epochs, section.epochs, defaults.max_epochs),
        patience: pick(args.patience, section.patience, defaults.patience),
        min_delta: pick(args.min_delta, section.min_delta, defaults.min_delta),
        batch_size: pick_opt(args.batch_size, section.batch_size),
        seed,
        ..defaults
    };
    let cluster_config = ClusterConfig {
        k: pick(args.clusters, section.clusters, 6),
        seed,
        standardize: pick_flag(args.standardize, section.standardize),
        ..ClusterConfig::default()
    };

    Ok(TrainSetup {
        cohort,
        model_config,
        train_config,
        cluster_config,
        val_frac: pick(args.val_frac, section.val_frac, 0.1),
        out: pick_opt(args.out, section.out.clone()),
    })
}

fn train_from_setup(setup: &TrainSetup, quiet: bool) -> Result<TrainedModel, CliError> {
    let (train_part, val_part) = carve_validation(
        &setup.cohort,
        setup.val_frac,
        setup.train_config.seed,
    )?;
    let val_part = val_part.ok_or_else(|| {
        CliError::Usage("--val-frac must be positive so early stopping has a validation set".into())
    })?;
    let model = train_with_logger(
        &train_part,
        &val_part,
        &setup.model_config,
        &setup.train_config,
        &setup.cluster_config,
        |stats| {
            if !quiet {
                println!(
                    "{},{},{}",
                    stats.epoch,
                    fmt_float(stats.train_loss),
                    fmt_float(stats.val_loss)
                );
            }
        },
    )?;
    Ok(model)
}

pub fn run_train(args: TrainArgs, file: &FileConfig, seed: u64, quiet: bool) -> CliResult {
    let setup = resolve_train(args, file, seed)?;
    let out = setup
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("missing required argument --out".into()))?;
    let model = train_from_setup(&setup, quiet)?;
    model.save(&out)?;
    if !quiet {
        println!(
            "saved checkpoint from epoch {} of {} to {}",
            model.best_epoch,
            model.history.len(),
            out.display()
        );
    }
    Ok(())
}

pub fn run_crossval(args: CrossvalArgs, file: &FileConfig, seed: u64, quiet: bool) -> CliResult {
    let folds = pick(args.folds, file.crossval.folds, 5);
    let report_path = pick_opt(args.report, file.crossval.out.clone());
    let setup = resolve_train(args.train, file, seed)?;

    let report = cross_validate(
        &setup.cohort,
        folds,
        &setup.model_config,
        &setup.train_config,
        &setup.cluster_config,
        setup.val_frac,
        seed,
    )?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &report_path {
        Some(path) => {
            std::fs::write(path, json).map_err(|e| io_error(path, e))?;
            if !quiet {
                println!("{}", report.summary());
                println!("wrote fold table to {}", path.display());
            }
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(load_checkpoint(path)?)
}

pub fn run_predict(args: PredictArgs, file: &FileConfig, quiet: bool) -> CliResult {
    let section = &file.predict;
    let model_path = pick_required(args.model, section.model.clone(), "model")?;
    let manifest = pick_required(args.manifest, section.manifest.clone(), "manifest")?;
    let out = pick_required(args.out, section.out.clone(), "out")?;

    let checkpoint = load_model(&model_path)?;
    let cohort = load_manifest(&manifest)?;
    let risks = score_cohort(
        &checkpoint.params,
        &checkpoint.header.model,
        &checkpoint.header.clustering,
        &cohort,
    )?;
    let rows = risk_table(&cohort, &risks)?;
    write_risk_table(&out, &rows)?;
    if !quiet {
        println!("scored {} patients to {}", rows.len(), out.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    c_index: f64,
    auc: f64,
    tau: f64,
    km_low: KMCurve,
    km_high: KMCurve,
    log_rank: LogRankResult,
}

fn write_km_csv(path: &Path, curve: &KMCurve) -> Result<(), CliError> {
    let mut csv = String::from("time,survival,at_risk,events\n");
    for i in 0..curve.times.len() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(curve.times[i]),
            fmt_float(curve.survival[i]),
            curve.at_risk[i],
            curve.events[i]
        ));
    }
    std::fs::write(path, csv).map_err(|e| io_error(path, e))
}

pub fn run_evaluate(args: EvaluateArgs, file: &FileConfig, quiet: bool) -> CliResult {
    let section = &file.evaluate;
    let model_path = pick_required(args.model, section.model.clone(), "model")?;
    let manifest = pick_required(args.manifest, section.manifest.clone(), "manifest")?;
    let out = pick_required(args.out, section.out.clone(), "out")?;

    let checkpoint = load_model(&model_path)?;
    let cohort = load_manifest(&manifest)?;
    let risks = score_cohort(
        &checkpoint.params,
        &checkpoint.header.model,
        &checkpoint.header.clustering,
        &cohort,
    )?;
    let labels = cohort.labels();

    let times: Vec<f64> = labels.iter().map(|l| l.time_days).collect();
    let tau = pick(args.tau, section.tau, lower_median(&times));
    let c_index = concordance_index(&risks, &labels)?;
    let auc = survival_auc(&risks, &labels, tau)?;

    let groups = median_risk_split(&risks)?;
    let low: Vec<_> = labels
        .iter()
        .zip(&groups)
        .filter(|(_, g)| **g == RiskGroup::Low)
        .map(|(l, _)| *l)
        .collect();
    let high: Vec<_> = labels
        .iter()
        .zip(&groups)
        .filter(|(_, g)| **g == RiskGroup::High)
        .map(|(l, _)| *l)
        .collect();
    let km_low = kaplan_meier(&low);
    let km_high = kaplan_meier(&high);
    let log_rank = log_rank_test(&low, &high)?;

    create_dir(&out)?;
    let evaluation = Evaluation {
        c_index,
        auc,
        tau,
        km_low: km_low.clone(),
        km_high: km_high.clone(),
        log_rank,
    };
    let json_path = out.join("evaluation.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&evaluation).expect("evaluation serializes"),
    )
    .map_err(|e| io_error(&json_path, e))?;
    write_km_csv(&out.join("km_low.csv"), &km_low)?;
    write_km_csv(&out.join("km_high.csv"), &km_high)?;

    if !quiet {
        println!(
            "c-index {:.4}, auc {:.4} at tau {:.1}, log-rank p {:.4}",
            c_index, auc, tau, log_rank.p_value
        );
        println!("wrote evaluation to {}", out.display());
    }
    Ok(())
}

pub fn run_heatmap(args: HeatmapArgs, file: &FileConfig, quiet: bool) -> CliResult {
    let section = &file.heatmap;
    let model_path = pick_required(args.model, section.model.clone(), "model")?;
    let manifest = pick_required(args.manifest, section.manifest.clone(), "manifest")?;
    let out = pick_required(args.out, section.out.clone(), "out")?;
    let tile = pick(args.tile, section.tile, DEFAULT_TILE_EDGE);
    let page_width = pick(args.page_width, section.page_width, 1000);
    let selected = if args.patient.is_empty() {
        section.patient.clone().unwrap_or_default()
    } else {
        args.patient
    };

    let checkpoint = load_model(&model_path)?;
    let cohort = load_manifest(&manifest)?;
    create_dir(&out)?;

    let mut exported = 0usize;
    for bag in cohort.patients() {
        if !selected.is_empty() && !selected.iter().any(|id| id == bag.patient_id()) {
            continue;
        }
        let assignment = kmeans_cluster(bag, &checkpoint.header.clustering)?;
        let base = sanitize(bag.patient_id());
        heatmap_export(
            &checkpoint.params,
            &checkpoint.header.model,
            bag,
            &assignment,
            out.join(format!("{base}_heatmap.csv")),
            out.join(format!("{base}_heatmap.svg")),
            tile,
            page_width,
        )?;
        exported += 1;
    }
    if exported == 0 {
        return Err(CliError::Usage(
            "no patients matched the --patient selection".into(),
        ));
    }
    if !quiet {
        println!("exported {exported} heatmaps to {}", out.display());
    }
    Ok(())
}

pub fn run_ensemble(args: EnsembleArgs, file: &FileConfig, quiet: bool) -> CliResult {
    let section = &file.ensemble;
    let model_paths = if args.models.is_empty() {
        section.models.clone().unwrap_or_default()
    } else {
        args.models
    };
    if model_paths.is_empty() {
        return Err(CliError::Usage(
            "missing required argument --models".into(),
        ));
    }
    let manifest = pick_required(args.manifest, section.manifest.clone(), "manifest")?;
    let out = pick_required(args.out, section.out.clone(), "out")?;

    let mut models = Vec::with_capacity(model_paths.len());
    for path in &model_paths {
        let checkpoint = load_model(path)?;
        models.push(TrainedModel {
            params: checkpoint.params,
            model_config: checkpoint.header.model,
            cluster_config: checkpoint.header.clustering,
            train_config: TrainConfig {
                seed: checkpoint.header.seed,
                ..TrainConfig::default()
            },
            best_epoch: checkpoint.header.epoch as usize,
            history: Vec::new(),
            best_train_risks: Vec::new(),
        });
    }

    let cohort = load_manifest(&manifest)?;
    let mut risks = Vec::with_capacity(cohort.n_patients());
    for bag in cohort.patients() {
        risks.push(ensemble_score_bag(&models, bag)?);
    }
    let rows = risk_table(&cohort, &risks)?;
    write_risk_table(&out, &rows)?;
    if !quiet {
        println!(
            "ensembled {} models over {} patients to {}",
            models.len(),
            rows.len(),
            out.display()
        );
    }
    Ok(())
}
