use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Follow-up outcome for one patient: observed time in days and whether the
/// death event was observed (`true`) or the record is censored (`false`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    pub time_days: f64,
    pub event: bool,
}

impl SurvivalLabel {
    pub fn new(time_days: f64, event: bool) -> Result<Self> {
        if !time_days.is_finite() || time_days <= 0.0 {
            return Err(Error::NonPositiveTime {
                patient_id: String::new(),
                time: time_days,
            });
        }
        Ok(Self { time_days, event })
    }
}

/// Tile origin of one patch within its source slide. Pixel content is out of
/// scope; the coordinates only identify the tile for provenance and heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchCoord {
    pub slide_index: u16,
    pub x: u32,
    pub y: u32,
}

/// One patient's bag of patch features, patch provenance and survival label.
///
/// Features are kept in the on-disk single-precision layout (`m x d`, row per
/// patch); all downstream arithmetic widens to `f64`.
#[derive(Debug, Clone)]
pub struct PatientBag {
    patient_id: String,
    features: Array2<f32>,
    coords: Vec<PatchCoord>,
    label: SurvivalLabel,
}

impl PatientBag {
    pub fn new(
        patient_id: impl Into<String>,
        features: Array2<f32>,
        coords: Vec<PatchCoord>,
        label: SurvivalLabel,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(Error::InvalidArgument("patient_id must be non-empty".into()));
        }
        let (m, d) = features.dim();
        if m == 0 {
            return Err(Error::EmptyBag);
        }
        if d == 0 {
            return Err(Error::InvalidArgument(format!(
                "patient {patient_id} has zero feature dimension"
            )));
        }
        if coords.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "patient {patient_id}: {} coordinate records for {m} patches",
                coords.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                path: patient_id.clone().into(),
                detail: "non-finite feature value".into(),
            });
        }
        Ok(Self {
            patient_id,
            features,
            coords,
            label,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn n_patches(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    /// Features widened to double precision for numerical work.
    pub fn features_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }

    /// One patch feature row widened to double precision.
    pub fn patch_f64(&self, index: usize) -> Array1<f64> {
        self.features.row(index).mapv(f64::from)
    }

    pub fn coords(&self) -> &[PatchCoord] {
        &self.coords
    }

    pub fn label(&self) -> SurvivalLabel {
        self.label
    }
}

/// A set of patients sharing one feature dimension.
#[derive(Debug, Clone)]
pub struct Cohort {
    patients: Vec<PatientBag>,
    feature_dim: usize,
}

impl Cohort {
    pub fn new(patients: Vec<PatientBag>) -> Result<Self> {
        let first = patients
            .first()
            .ok_or(Error::EmptyInput("cohort has no patients"))?;
        let feature_dim = first.feature_dim();
        let mut seen = std::collections::HashSet::new();
        for bag in &patients {
            if bag.feature_dim() != feature_dim {
                return Err(Error::DimensionMismatch {
                    patient_id: bag.patient_id().to_string(),
                    expected: feature_dim,
                    got: bag.feature_dim(),
                });
            }
            if !seen.insert(bag.patient_id().to_string()) {
                return Err(Error::DuplicatePatientId {
                    patient_id: bag.patient_id().to_string(),
                });
            }
        }
        Ok(Self {
            patients,
            feature_dim,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn patients(&self) -> &[PatientBag] {
        &self.patients
    }

    pub fn patient(&self, index: usize) -> &PatientBag {
        &self.patients[index]
    }

    pub fn labels(&self) -> Vec<SurvivalLabel> {
        self.patients.iter().map(|p| p.label()).collect()
    }

    pub fn event_count(&self) -> usize {
        self.patients.iter().filter(|p| p.label().event).count()
    }

    /// New cohort from a subset of patient indices, preserving the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Cohort> {
        let patients = indices
            .iter()
            .map(|&i| self.patients[i].clone())
            .collect::<Vec<_>>();
        Cohort::new(patients)
    }
}

fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    indices
}

fn round_half_up(x: f64) -> usize {
    x.round() as usize
}

fn require_events(cohort: &Cohort, which: &str) -> Result<()> {
    if cohort.event_count() == 0 {
        return Err(Error::NoEvents {
            which: which.to_string(),
        });
    }
    Ok(())
}

/// Deterministic train/validation/test split.
///
/// Sizes follow a round-half-up rule on the requested fractions with the
/// validation size floored at one patient whenever `val_frac_of_train > 0`.
/// Every non-empty partition must retain at least one event patient.
pub fn split_cohort(
    cohort: &Cohort,
    test_frac: f64,
    val_frac_of_train: f64,
    seed: u64,
) -> Result<(Cohort, Option<Cohort>, Cohort)> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_frac must lie in (0, 1), got {test_frac}"
        )));
    }
    if !(0.0..1.0).contains(&val_frac_of_train) {
        return Err(Error::InvalidArgument(format!(
            "val_frac_of_train must lie in [0, 1), got {val_frac_of_train}"
        )));
    }
    let n = cohort.n_patients();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 patients to split, got {n}"
        )));
    }

    let n_test = round_half_up(test_frac * n as f64);
    if n_test == 0 {
        return Err(Error::EmptySplit { which: "test" });
    }
    let n_rest = n - n_test;
    let n_val = if val_frac_of_train > 0.0 {
        round_half_up(val_frac_of_train * n_rest as f64).max(1)
    } else {
        0
    };
    if n_test + n_val >= n {
        return Err(Error::EmptySplit { which: "train" });
    }
    if val_frac_of_train > 0.0 && n_val == 0 {
        return Err(Error::EmptySplit { which: "validation" });
    }

    let order = seeded_permutation(n, seed);
    let mut test_idx: Vec<usize> = order[..n_test].to_vec();
    let mut val_idx: Vec<usize> = order[n_test..n_test + n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_test + n_val..].to_vec();
    test_idx.sort_unstable();
    val_idx.sort_unstable();
    train_idx.sort_unstable();

    let train = cohort.subset(&train_idx)?;
    let test = cohort.subset(&test_idx)?;
    require_events(&train, "train")?;
    require_events(&test, "test")?;
    let val = if n_val > 0 {
        let val = cohort.subset(&val_idx)?;
        require_events(&val, "validation")?;
        Some(val)
    } else {
        None
    };
    Ok((train, val, test))
}

/// Carve a validation set out of a training pool with the same rounding rule
/// as [`split_cohort`]. Used by cross-validation folds.
pub fn carve_validation(
    pool: &Cohort,
    val_frac: f64,
    seed: u64,
) -> Result<(Cohort, Option<Cohort>)> {
    if !(0.0..1.0).contains(&val_frac) {
        return Err(Error::InvalidArgument(format!(
            "val_frac must lie in [0, 1), got {val_frac}"
        )));
    }
    let n = pool.n_patients();
    if val_frac == 0.0 {
        require_events(pool, "train")?;
        return Ok((pool.clone(), None));
    }
    let n_val = round_half_up(val_frac * n as f64).max(1);
    if n_val >= n {
        return Err(Error::EmptySplit { which: "train" });
    }
    let order = seeded_permutation(n, seed);
    let mut val_idx: Vec<usize> = order[..n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let train = pool.subset(&train_idx)?;
    let val = pool.subset(&val_idx)?;
    require_events(&train, "train")?;
    require_events(&val, "validation")?;
    Ok((train, Some(val)))
}
