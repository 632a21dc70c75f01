use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification used by callers (e.g. the CLI) to pick exit codes:
/// problems with inputs/files vs. problems with computed numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Data,
    Numerical,
}

/// Errors surfaced while loading cohorts, clustering, training or evaluating.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("non-positive survival time {time} for patient {patient_id}")]
    NonPositiveTime { patient_id: String, time: f64 },
    #[error("event indicator for patient {patient_id} must be 0 or 1, got `{value}`")]
    BadEventIndicator { patient_id: String, value: String },
    #[error("duplicate patient id `{patient_id}`")]
    DuplicatePatientId { patient_id: String },
    #[error("feature dimension mismatch: patient {patient_id} has d = {got}, cohort has d = {expected}")]
    DimensionMismatch {
        patient_id: String,
        expected: usize,
        got: usize,
    },
    #[error("{path}: bad magic, expected `{expected}`")]
    BadMagic { path: PathBuf, expected: String },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated payload")]
    Truncated { path: PathBuf },
    #[error("{path}: malformed file: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("empty bag: a patient needs at least one patch")]
    EmptyBag,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("split leaves the {which} partition empty")]
    EmptySplit { which: &'static str },
    #[error("the {which} partition has no event patients")]
    NoEvents { which: String },
    #[error("assignment for patient {assignment_id} does not belong to bag {bag_id}")]
    PatientMismatch {
        assignment_id: String,
        bag_id: String,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("all phenotype clusters are empty")]
    AllClustersEmpty,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("no comparable pairs for concordance")]
    NoComparablePairs,
    #[error("horizon AUC needs at least one case and one control (got {cases} cases, {controls} controls)")]
    NoCasesOrControls { cases: usize, controls: usize },
    #[error("model configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("non-finite {what} encountered")]
    NonFinite { what: &'static str },
    #[error("log-rank variance is zero: groups have no comparable structure")]
    ZeroVariance,
    #[error("all risk scores identical: degenerate model output")]
    DegenerateRisks,
}

impl Error {
    /// Which exit-code family the error belongs to.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NonFinite { .. } | Error::ZeroVariance | Error::DegenerateRisks => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
