//! Scoring cohorts with a trained model: clustering per the model's stored
//! configuration, forward passes, and the `patient_id,risk,group` table.

use std::path::Path;

use crate::cluster::{phenotype_tensors, ClusterConfig, PhenotypeTensor};
use crate::data::{Cohort, PatientBag};
use crate::error::{Error, Result};
use crate::metrics::{median_risk_split, RiskGroup};
use crate::model::{risk_forward, ModelConfig, ModelParams};
use crate::util::fmt_float;

/// The instances a model consumes for one patient: phenotype tensors from
/// per-patient k-means for the siamese model, or the whole bag as a single
/// tensor when clusters are ignored.
pub fn tensors_for_model(
    bag: &PatientBag,
    model_config: &ModelConfig,
    cluster_config: &ClusterConfig,
) -> Result<Vec<PhenotypeTensor>> {
    if model_config.siamese {
        let (_, tensors) = phenotype_tensors(bag, cluster_config)?;
        Ok(tensors)
    } else {
        Ok(vec![PhenotypeTensor {
            cluster_index: 0,
            features: bag.features_f64(),
        }])
    }
}

pub fn score_bag(
    params: &ModelParams,
    model_config: &ModelConfig,
    cluster_config: &ClusterConfig,
    bag: &PatientBag,
) -> Result<f64> {
    if bag.feature_dim() != model_config.feature_dim {
        return Err(Error::DimensionMismatch {
            patient_id: bag.patient_id().to_string(),
            expected: model_config.feature_dim,
            got: bag.feature_dim(),
        });
    }
    let tensors = tensors_for_model(bag, model_config, cluster_config)?;
    Ok(risk_forward(params, model_config, &tensors)?.risk)
}

/// Risk scores for a whole cohort, in cohort order.
pub fn score_cohort(
    params: &ModelParams,
    model_config: &ModelConfig,
    cluster_config: &ClusterConfig,
    cohort: &Cohort,
) -> Result<Vec<f64>> {
    cohort
        .patients()
        .iter()
        .map(|bag| score_bag(params, model_config, cluster_config, bag))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RiskRow {
    pub patient_id: String,
    pub risk: f64,
    pub group: RiskGroup,
}

/// Risk table over a scored cohort; the group column is the median split of
/// the scored set.
pub fn risk_table(cohort: &Cohort, risks: &[f64]) -> Result<Vec<RiskRow>> {
    if cohort.n_patients() != risks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} risks for {} patients",
            risks.len(),
            cohort.n_patients()
        )));
    }
    let groups = median_risk_split(risks)?;
    Ok(cohort
        .patients()
        .iter()
        .zip(risks)
        .zip(groups)
        .map(|((bag, &risk), group)| RiskRow {
            patient_id: bag.patient_id().to_string(),
            risk,
            group,
        })
        .collect())
}

/// Write `patient_id,risk,group` CSV.
pub fn write_risk_table(path: impl AsRef<Path>, rows: &[RiskRow]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut out = String::from("patient_id,risk,group\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.patient_id,
            fmt_float(row.risk),
            row.group
        ));
    }
    std::fs::write(path, out).map_err(io_err)
}
