//! Cohort data model, file formats, splits and the synthetic generator.

mod cohort;
mod feature_file;
mod manifest;
mod synth;

pub use cohort::{
    carve_validation, split_cohort, Cohort, PatchCoord, PatientBag, SurvivalLabel,
};
pub use feature_file::{
    load_patient_features, save_patient_features, FeaturePayload, FEATURE_FORMAT_VERSION,
    FEATURE_MAGIC,
};
pub use manifest::{load_manifest, save_manifest, ManifestEntry, MANIFEST_HEADER};
pub use synth::{generate_synthetic_cohort, SyntheticCohort, SyntheticConfig};
