//! End-to-end optimization: Adam with decoupled weight decay, validation
//! early stopping, k-fold cross-validation and ensemble prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterConfig, PhenotypeTensor};
use crate::cox::{cox_loss, cox_loss_gradient};
use crate::data::{carve_validation, Cohort, SurvivalLabel};
use crate::error::{Error, Result};
use crate::metrics::{concordance_index, survival_auc};
use crate::model::{
    backward_pass, forward_pass, init_params, risk_forward, CheckpointHeader, ModelConfig,
    ModelParams,
};
use crate::scoring::tensors_for_model;
use crate::util::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without a `min_delta` improvement of the validation loss
    /// before training stops.
    pub patience: usize,
    pub min_delta: f64,
    /// None trains full-batch, which keeps the partial-likelihood risk sets
    /// exact. Mini-batches restrict risk sets to the batch.
    pub batch_size: Option<usize>,
    /// Divide the loss (and its gradient) by the number of events in the
    /// batch for scale stability.
    pub normalize_loss: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 100,
            patience: 10,
            min_delta: 1e-4,
            batch_size: None,
            normalize_loss: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be non-negative".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::InvalidArgument("min_delta must be non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment accumulators, flattened in parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let len = params.flat_len();
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One optimizer step: bias-corrected Adam plus decoupled weight decay,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    let flat_grads = grads.to_flat_vec();
    if flat_grads.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} entries, optimizer state has {}",
            flat_grads.len(),
            state.m.len()
        )));
    }
    if flat_grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient" });
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);

    let mut theta = params.to_flat_vec();
    for i in 0..theta.len() {
        let g = flat_grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        theta[i] -= config.learning_rate * (m_hat / (v_hat.sqrt() + config.epsilon))
            + config.learning_rate * config.weight_decay * theta[i];
    }
    params.copy_from_flat(&theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub model_config: ModelConfig,
    pub cluster_config: ClusterConfig,
    pub train_config: TrainConfig,
    /// Epoch (1-based) whose parameters are stored.
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    /// Risk scores over the training cohort at the best epoch, in cohort
    /// order.
    pub best_train_risks: Vec<f64>,
}

impl TrainedModel {
    pub fn checkpoint_header(&self) -> CheckpointHeader {
        CheckpointHeader {
            model: self.model_config,
            clustering: self.cluster_config,
            seed: self.train_config.seed,
            epoch: self.best_epoch as u64,
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::model::save_checkpoint(path, &self.checkpoint_header(), &self.params)
    }
}

struct PreparedPatient {
    tensors: Vec<PhenotypeTensor>,
    label: SurvivalLabel,
}

fn prepare(
    cohort: &Cohort,
    model_config: &ModelConfig,
    cluster_config: &ClusterConfig,
) -> Result<Vec<PreparedPatient>> {
    cohort
        .patients()
        .iter()
        .map(|bag| {
            Ok(PreparedPatient {
                tensors: tensors_for_model(bag, model_config, cluster_config)?,
                label: bag.label(),
            })
        })
        .collect()
}

fn batch_loss_and_risks(
    params: &ModelParams,
    model_config: &ModelConfig,
    patients: &[PreparedPatient],
    normalize: bool,
) -> Result<(f64, Vec<f64>)> {
    let mut risks = Vec::with_capacity(patients.len());
    for p in patients {
        risks.push(forward_pass(params, model_config, &p.tensors)?.output.risk);
    }
    let labels: Vec<SurvivalLabel> = patients.iter().map(|p| p.label).collect();
    let mut loss = cox_loss(&risks, &labels)?;
    if normalize {
        let events = labels.iter().filter(|l| l.event).count();
        if events > 0 {
            loss /= events as f64;
        }
    }
    Ok((loss, risks))
}

/// Train with early stopping, reporting one [`EpochStats`] per epoch through
/// `logger`. Deterministic given the seed: clustering, initialization,
/// batching and accumulation order are all fixed.
pub fn train_with_logger(
    train_cohort: &Cohort,
    val_cohort: &Cohort,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    cluster_config: &ClusterConfig,
    mut logger: impl FnMut(&EpochStats),
) -> Result<TrainedModel> {
    model_config.validate()?;
    train_config.validate()?;
    if model_config.feature_dim != train_cohort.feature_dim() {
        return Err(Error::DimensionMismatch {
            patient_id: "<model>".into(),
            expected: train_cohort.feature_dim(),
            got: model_config.feature_dim,
        });
    }
    if train_cohort.event_count() == 0 {
        return Err(Error::NoEvents {
            which: "train".into(),
        });
    }
    if val_cohort.event_count() == 0 {
        return Err(Error::NoEvents {
            which: "validation".into(),
        });
    }

    // Phenotypes do not depend on model parameters: cluster once, reuse
    // every epoch.
    let train_patients = prepare(train_cohort, model_config, cluster_config)?;
    let val_patients = prepare(val_cohort, model_config, cluster_config)?;

    let mut params = init_params(model_config, train_config.seed)?;
    let mut state = AdamState::new(&params);
    let mut batch_seed = train_config.seed.to_le_bytes().to_vec();
    batch_seed.extend_from_slice(b"batchsel");
    let mut batch_rng = ChaCha8Rng::seed_from_u64(fnv1a64(&batch_seed));

    let n = train_patients.len();
    let batch_size = train_config.batch_size.unwrap_or(n).min(n);

    let mut history: Vec<EpochStats> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut best_train_risks = Vec::new();
    let mut stall = 0usize;

    for epoch in 1..=train_config.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if batch_size < n {
            order.shuffle(&mut batch_rng);
        }

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&PreparedPatient> =
                chunk.iter().map(|&i| &train_patients[i]).collect();

            let mut risks = Vec::with_capacity(batch.len());
            let mut passes = Vec::with_capacity(batch.len());
            for p in &batch {
                let pass = forward_pass(&params, model_config, &p.tensors)?;
                risks.push(pass.output.risk);
                passes.push(pass);
            }
            let labels: Vec<SurvivalLabel> = batch.iter().map(|p| p.label).collect();
            let mut loss = cox_loss(&risks, &labels)?;
            let mut loss_grad = cox_loss_gradient(&risks, &labels)?;
            if train_config.normalize_loss {
                let events = labels.iter().filter(|l| l.event).count();
                if events > 0 {
                    let scale = 1.0 / events as f64;
                    loss *= scale;
                    for g in &mut loss_grad {
                        *g *= scale;
                    }
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: "loss" });
            }
            epoch_loss += loss;
            n_batches += 1;

            let mut grads = ModelParams::zeros(model_config)?;
            for (pass, &g) in passes.iter().zip(&loss_grad) {
                backward_pass(&params, model_config, pass, g, &mut grads);
            }
            adam_step(&mut params, &grads, &mut state, train_config)?;
        }

        let train_loss = epoch_loss / n_batches as f64;
        let (val_loss, _) = batch_loss_and_risks(
            &params,
            model_config,
            &val_patients,
            train_config.normalize_loss,
        )?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite { what: "loss" });
        }

        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
        };
        history.push(stats);
        logger(&stats);

        if epoch == 1 || best_val - val_loss > train_config.min_delta {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
            let (_, risks) = batch_loss_and_risks(
                &best_params,
                model_config,
                &train_patients,
                train_config.normalize_loss,
            )?;
            best_train_risks = risks;
            stall = 0;
        } else {
            stall += 1;
            if stall >= train_config.patience {
                break;
            }
        }
    }

    Ok(TrainedModel {
        params: best_params,
        model_config: *model_config,
        cluster_config: *cluster_config,
        train_config: *train_config,
        best_epoch,
        history,
        best_train_risks,
    })
}

pub fn train(
    train_cohort: &Cohort,
    val_cohort: &Cohort,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    cluster_config: &ClusterConfig,
) -> Result<TrainedModel> {
    train_with_logger(
        train_cohort,
        val_cohort,
        model_config,
        train_config,
        cluster_config,
        |_| {},
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub c_index: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
    pub mean_c_index: f64,
    pub std_c_index: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
}

impl CrossValReport {
    /// Mean with sample standard deviation, e.g. "0.595 (0.036)".
    pub fn summary(&self) -> String {
        format!(
            "c-index {:.3} ({:.3}), auc {:.3} ({:.3})",
            self.mean_c_index, self.std_c_index, self.mean_auc, self.std_auc
        )
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Lower sample median: element at ceil(n/2) - 1 of the sorted values.
pub(crate) fn lower_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    sorted[sorted.len().div_ceil(2) - 1]
}

/// Seeded fold partition: indices shuffled once, dealt into `folds` nearly
/// even contiguous slices.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for fold in 0..folds {
        let size = base + usize::from(fold < extra);
        let mut part: Vec<usize> = order[start..start + size].to_vec();
        part.sort_unstable();
        out.push(part);
        start += size;
    }
    out
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut bytes = Vec::with_capacity(16);
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(&(fold as u64).to_le_bytes());
    fnv1a64(&bytes)
}

/// K-fold cross-validation. Each fold carves its validation set from the
/// fold's training portion, trains from scratch and scores the held-out
/// fold; the AUC horizon is the held-out fold's lower-median observed time.
pub fn cross_validate(
    cohort: &Cohort,
    folds: usize,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    cluster_config: &ClusterConfig,
    val_frac: f64,
    seed: u64,
) -> Result<CrossValReport> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if folds > cohort.n_patients() {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds for {} patients",
            cohort.n_patients()
        )));
    }

    let partition = fold_partition(cohort.n_patients(), folds, seed);
    let mut results = Vec::with_capacity(folds);
    for (fold, test_idx) in partition.iter().enumerate() {
        let train_idx: Vec<usize> = (0..cohort.n_patients())
            .filter(|i| !test_idx.contains(i))
            .collect();
        let pool = cohort.subset(&train_idx)?;
        let test = cohort.subset(test_idx)?;
        if test.event_count() == 0 {
            return Err(Error::NoEvents {
                which: format!("fold {fold} test"),
            });
        }
        let this_seed = fold_seed(seed, fold);
        let (train_part, val_part) = carve_validation(&pool, val_frac, this_seed)?;
        let val_part = val_part.unwrap_or_else(|| train_part.clone());

        let fold_train_config = TrainConfig {
            seed: this_seed,
            ..*train_config
        };
        let model = train(
            &train_part,
            &val_part,
            model_config,
            &fold_train_config,
            cluster_config,
        )?;

        let risks = crate::scoring::score_cohort(
            &model.params,
            &model.model_config,
            &model.cluster_config,
            &test,
        )?;
        let labels = test.labels();
        let c_index = concordance_index(&risks, &labels)?;
        let times: Vec<f64> = labels.iter().map(|l| l.time_days).collect();
        let auc = survival_auc(&risks, &labels, lower_median(&times))?;
        results.push(FoldResult {
            fold,
            c_index,
            auc,
        });
    }

    let (mean_c, std_c) = mean_and_std(&results.iter().map(|r| r.c_index).collect::<Vec<_>>());
    let (mean_a, std_a) = mean_and_std(&results.iter().map(|r| r.auc).collect::<Vec<_>>());
    Ok(CrossValReport {
        folds: results,
        mean_c_index: mean_c,
        std_c_index: std_c,
        mean_auc: mean_a,
        std_auc: std_a,
    })
}

/// Average the risk scores of several models over one patient's tensors.
/// All models must share the same architecture.
pub fn ensemble_predict(models: &[TrainedModel], tensors: &[PhenotypeTensor]) -> Result<f64> {
    let first = models.first().ok_or(Error::EmptyInput("no models"))?;
    let mut total = 0.0;
    for model in models {
        if model.model_config != first.model_config {
            return Err(Error::ConfigMismatch(
                "ensemble members have different architectures".into(),
            ));
        }
        total += risk_forward(&model.params, &model.model_config, tensors)?.risk;
    }
    Ok(total / models.len() as f64)
}

/// Ensemble scoring straight from a bag: each model clusters the patient
/// with its own clustering configuration before averaging.
pub fn ensemble_score_bag(models: &[TrainedModel], bag: &crate::data::PatientBag) -> Result<f64> {
    let first = models.first().ok_or(Error::EmptyInput("no models"))?;
    let mut total = 0.0;
    for model in models {
        if model.model_config != first.model_config {
            return Err(Error::ConfigMismatch(
                "ensemble members have different architectures".into(),
            ));
        }
        total += crate::scoring::score_bag(
            &model.params,
            &model.model_config,
            &model.cluster_config,
            bag,
        )?;
    }
    Ok(total / models.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_cohort, split_cohort, SyntheticConfig};
    use approx::assert_abs_diff_eq;

    fn small_model(d: usize) -> ModelConfig {
        let mut config = ModelConfig::new(d);
        config.attention_hidden = 8;
        config
    }

    fn quick_train_config(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 5e-3,
            max_epochs: 15,
            patience: 5,
            seed,
            ..TrainConfig::default()
        }
    }

    fn tiny_cohorts(seed: u64) -> (Cohort, Cohort) {
        let out = generate_synthetic_cohort(&SyntheticConfig {
            n_patients: 24,
            patches_per_patient: 12,
            feature_dim: 6,
            n_archetypes: 3,
            hazard_scale: 8.0,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let (train, val, _) = split_cohort(&out.cohort, 0.2, 0.15, seed).unwrap();
        (train, val.unwrap())
    }

    #[test]
    fn adam_pure_decay_step() {
        let config = ModelConfig::new(2);
        let mut params = ModelParams::zeros(&config).unwrap();
        let flat_len = params.flat_len();
        params
            .copy_from_flat(&vec![1.0; flat_len])
            .unwrap();
        let grads = ModelParams::zeros(&config).unwrap();
        let mut state = AdamState::new(&params);
        let train_config = TrainConfig::default();
        adam_step(&mut params, &grads, &mut state, &train_config).unwrap();
        for v in params.to_flat_vec() {
            assert_abs_diff_eq!(v, 0.99999995, epsilon = 1e-15);
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_learning_rate_is_identity() {
        let config = ModelConfig::new(2);
        let params0 = init_params(&config, 3).unwrap();
        let mut params = params0.clone();
        let mut grads = ModelParams::zeros(&config).unwrap();
        let flat_len = grads.flat_len();
        grads
            .copy_from_flat(&(0..flat_len).map(|i| i as f64 * 0.01).collect::<Vec<_>>())
            .unwrap();
        let mut state = AdamState::new(&params);
        // Zero learning rate is rejected as a config, so emulate with the
        // raw update: lr -> tiny is the supported path; instead assert the
        // validation rejects it.
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        // A tiny learning rate moves parameters by at most lr * (1 + wd).
        let tiny = TrainConfig {
            learning_rate: 1e-300,
            ..TrainConfig::default()
        };
        adam_step(&mut params, &grads, &mut state, &tiny).unwrap();
        for (a, b) in params.to_flat_vec().iter().zip(params0.to_flat_vec()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-250);
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let config = ModelConfig::new(2);
        let mut params = ModelParams::zeros(&config).unwrap();
        let mut grads = ModelParams::zeros(&config).unwrap();
        let flat_len = grads.flat_len();
        grads.copy_from_flat(&vec![1e-3; flat_len]).unwrap();
        let mut state = AdamState::new(&params);
        let train_config = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        adam_step(&mut params, &grads, &mut state, &train_config).unwrap();
        for v in params.to_flat_vec() {
            // First bias-corrected step equals -lr * g / (|g| + eps).
            assert_abs_diff_eq!(v, -1e-4 * (1e-3 / (1e-3 + 1e-8)), epsilon = 1e-12);
        }
    }

    #[test]
    fn adam_matches_scalar_reference_without_decay() {
        let config = ModelConfig::new(2);
        let mut params = ModelParams::zeros(&config).unwrap();
        let flat_len = params.flat_len();
        let mut state = AdamState::new(&params);
        let train_config = TrainConfig {
            weight_decay: 0.0,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };

        // Scalar textbook Adam on coordinate 0.
        let grad_sequence = [0.3, -0.7, 0.2, 0.9, -0.1];
        let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for (t, &g) in grad_sequence.iter().enumerate() {
            let mut grads = ModelParams::zeros(&config).unwrap();
            let mut flat = vec![0.0; flat_len];
            flat[0] = g;
            grads.copy_from_flat(&flat).unwrap();
            adam_step(&mut params, &grads, &mut state, &train_config).unwrap();

            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            theta -= 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
            assert_abs_diff_eq!(params.to_flat_vec()[0], theta, epsilon = 1e-15);
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let config = ModelConfig::new(2);
        let mut params = ModelParams::zeros(&config).unwrap();
        let mut grads = ModelParams::zeros(&config).unwrap();
        let flat_len = grads.flat_len();
        let mut flat = vec![0.0; flat_len];
        flat[3] = f64::NAN;
        grads.copy_from_flat(&flat).unwrap();
        let mut state = AdamState::new(&params);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, &TrainConfig::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn training_loss_decreases_to_best_epoch() {
        let (train_c, val_c) = tiny_cohorts(5);
        let model = train(
            &train_c,
            &val_c,
            &small_model(6),
            &quick_train_config(5),
            &ClusterConfig {
                k: 3,
                seed: 5,
                ..ClusterConfig::default()
            },
        )
        .unwrap();
        assert!(model.best_epoch >= 1);
        let first = model.history.first().unwrap().train_loss;
        let at_best = model.history[model.best_epoch - 1].train_loss;
        assert!(
            at_best <= first,
            "train loss {first} -> {at_best} by epoch {}",
            model.best_epoch
        );
    }

    #[test]
    fn forced_early_stop_after_two_epochs() {
        let (train_c, val_c) = tiny_cohorts(6);
        let config = TrainConfig {
            patience: 1,
            min_delta: f64::INFINITY,
            ..quick_train_config(6)
        };
        let model = train(
            &train_c,
            &val_c,
            &small_model(6),
            &config,
            &ClusterConfig {
                k: 3,
                seed: 6,
                ..ClusterConfig::default()
            },
        )
        .unwrap();
        assert_eq!(model.history.len(), 2);
        assert_eq!(model.best_epoch, 1);
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let (train_c, val_c) = tiny_cohorts(7);
        let cluster = ClusterConfig {
            k: 3,
            seed: 7,
            ..ClusterConfig::default()
        };
        let a = train(
            &train_c,
            &val_c,
            &small_model(6),
            &quick_train_config(7),
            &cluster,
        )
        .unwrap();
        let b = train(
            &train_c,
            &val_c,
            &small_model(6),
            &quick_train_config(7),
            &cluster,
        )
        .unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.to_flat_vec(), b.params.to_flat_vec());
        assert_eq!(a.best_train_risks, b.best_train_risks);
    }

    #[test]
    fn best_epoch_has_minimum_validation_loss() {
        let (train_c, val_c) = tiny_cohorts(8);
        let model = train(
            &train_c,
            &val_c,
            &small_model(6),
            &quick_train_config(8),
            &ClusterConfig {
                k: 3,
                seed: 8,
                ..ClusterConfig::default()
            },
        )
        .unwrap();
        let min_val = model
            .history
            .iter()
            .map(|s| s.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(
            model.history[model.best_epoch - 1].val_loss,
            min_val,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fold_partition_is_disjoint_and_exhaustive() {
        let parts = fold_partition(50, 5, 3);
        assert_eq!(parts.len(), 5);
        assert!(parts.iter().all(|p| p.len() == 10));
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn ensemble_of_one_is_identity_and_mean_of_two() {
        let (train_c, val_c) = tiny_cohorts(9);
        let cluster = ClusterConfig {
            k: 3,
            seed: 9,
            ..ClusterConfig::default()
        };
        let m1 = train(
            &train_c,
            &val_c,
            &small_model(6),
            &quick_train_config(9),
            &cluster,
        )
        .unwrap();
        let m2 = train(
            &train_c,
            &val_c,
            &small_model(6),
            &quick_train_config(10),
            &cluster,
        )
        .unwrap();

        let bag = train_c.patient(0);
        let tensors = tensors_for_model(bag, &m1.model_config, &m1.cluster_config).unwrap();
        let single = ensemble_predict(std::slice::from_ref(&m1), &tensors).unwrap();
        let direct = risk_forward(&m1.params, &m1.model_config, &tensors)
            .unwrap()
            .risk;
        assert_eq!(single, direct);

        let r1 = risk_forward(&m1.params, &m1.model_config, &tensors).unwrap().risk;
        let r2 = risk_forward(&m2.params, &m2.model_config, &tensors).unwrap().risk;
        let both = ensemble_predict(&[m1, m2], &tensors).unwrap();
        assert_abs_diff_eq!(both, (r1 + r2) / 2.0, epsilon = 1e-15);
    }
}
