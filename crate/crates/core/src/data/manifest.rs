//! Cohort manifests: UTF-8 CSV with header
//! `patient_id,feature_path,time_days,event`, one row per patient.
//! Feature paths are resolved relative to the manifest's directory.

use std::path::{Path, PathBuf};

use crate::data::cohort::{Cohort, PatientBag, SurvivalLabel};
use crate::data::feature_file::load_patient_features;
use crate::error::{Error, Result};
use crate::util::fmt_float;

pub const MANIFEST_HEADER: [&str; 4] = ["patient_id", "feature_path", "time_days", "event"];

/// One manifest row, as written by `save_manifest`.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub feature_path: PathBuf,
    pub label: SurvivalLabel,
}

fn manifest_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Load a cohort from a manifest, reading every referenced feature file.
/// Row order is preserved.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => manifest_err(path, 1, e.to_string()),
        })?;

    {
        let headers = reader
            .headers()
            .map_err(|e| manifest_err(path, 1, e.to_string()))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != MANIFEST_HEADER {
            return Err(manifest_err(
                path,
                1,
                format!(
                    "expected header `{}`, got `{}`",
                    MANIFEST_HEADER.join(","),
                    got.join(",")
                ),
            ));
        }
    }

    let mut patients = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| manifest_err(path, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(manifest_err(
                path,
                line,
                format!("expected 4 fields, got {}", record.len()),
            ));
        }
        let patient_id = record[0].to_string();
        if patient_id.is_empty() {
            return Err(manifest_err(path, line, "empty patient_id"));
        }
        let feature_path = base.join(&record[1]);
        let time_days: f64 = record[2]
            .parse()
            .map_err(|_| manifest_err(path, line, format!("bad time_days `{}`", &record[2])))?;
        if !time_days.is_finite() || time_days <= 0.0 {
            return Err(Error::NonPositiveTime {
                patient_id,
                time: time_days,
            });
        }
        let event = match &record[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::BadEventIndicator {
                    patient_id,
                    value: other.to_string(),
                })
            }
        };

        let payload = load_patient_features(&feature_path)?;
        let bag = PatientBag::new(
            patient_id,
            payload.features,
            payload.coords,
            SurvivalLabel { time_days, event },
        )?;
        patients.push(bag);
    }

    if patients.is_empty() {
        return Err(Error::EmptyInput("manifest has no patient rows"));
    }
    Cohort::new(patients)
}

/// Write a manifest. Feature paths are written as given (callers pass paths
/// relative to the manifest's directory).
pub fn save_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let io_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    writer.write_record(MANIFEST_HEADER).map_err(io_err)?;
    for entry in entries {
        writer
            .write_record([
                entry.patient_id.as_str(),
                &entry.feature_path.to_string_lossy(),
                &fmt_float(entry.label.time_days),
                if entry.label.event { "1" } else { "0" },
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cohort::PatchCoord;
    use crate::data::feature_file::save_patient_features;
    use ndarray::Array2;

    fn write_feature_file(dir: &Path, name: &str, id: &str, m: usize, d: usize) -> PathBuf {
        let features = Array2::from_shape_fn((m, d), |(i, j)| (i + j) as f32);
        let coords = vec![
            PatchCoord {
                slide_index: 0,
                x: 0,
                y: 0
            };
            m
        ];
        let path = dir.join(name);
        save_patient_features(&path, id, &features, &coords).unwrap();
        path
    }

    fn write_manifest(dir: &Path, rows: &[(&str, &str, &str, &str)]) -> PathBuf {
        let mut text = String::from("patient_id,feature_path,time_days,event\n");
        for (id, file, time, event) in rows {
            text.push_str(&format!("{id},{file},{time},{event}\n"));
        }
        let path = dir.join("manifest.csv");
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn loads_two_patient_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(dir.path(), "a.amf", "a", 3, 4);
        write_feature_file(dir.path(), "b.amf", "b", 5, 4);
        let manifest = write_manifest(
            dir.path(),
            &[("a", "a.amf", "120.5", "1"), ("b", "b.amf", "300", "0")],
        );
        let cohort = load_manifest(&manifest).unwrap();
        assert_eq!(cohort.n_patients(), 2);
        assert_eq!(cohort.feature_dim(), 4);
        assert_eq!(cohort.patient(0).patient_id(), "a");
        assert_eq!(cohort.patient(1).n_patches(), 5);
        assert!(!cohort.patient(1).label().event);
    }

    #[test]
    fn rejects_non_positive_time() {
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(dir.path(), "a.amf", "a", 2, 4);
        let manifest = write_manifest(dir.path(), &[("a", "a.amf", "0", "1")]);
        assert!(matches!(
            load_manifest(&manifest),
            Err(Error::NonPositiveTime { .. })
        ));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(dir.path(), "a.amf", "a", 2, 4);
        write_feature_file(dir.path(), "b.amf", "b", 2, 8);
        let manifest = write_manifest(
            dir.path(),
            &[("a", "a.amf", "10", "1"), ("b", "b.amf", "20", "0")],
        );
        assert!(matches!(
            load_manifest(&manifest),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_event() {
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(dir.path(), "a.amf", "a", 2, 4);
        let manifest = write_manifest(
            dir.path(),
            &[("a", "a.amf", "10", "1"), ("a", "a.amf", "20", "0")],
        );
        assert!(matches!(
            load_manifest(&manifest),
            Err(Error::DuplicatePatientId { .. })
        ));

        let manifest = write_manifest(dir.path(), &[("a", "a.amf", "10", "2")]);
        assert!(matches!(
            load_manifest(&manifest),
            Err(Error::BadEventIndicator { .. })
        ));
    }

    #[test]
    fn rejects_missing_feature_file() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(dir.path(), &[("a", "missing.amf", "10", "1")]);
        assert!(matches!(load_manifest(&manifest), Err(Error::Io { .. })));
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(dir.path(), "a.amf", "a", 2, 4);
        let entries = vec![ManifestEntry {
            patient_id: "a".into(),
            feature_path: "a.amf".into(),
            label: SurvivalLabel {
                time_days: 123.456789012345,
                event: true,
            },
        }];
        let path = dir.path().join("manifest.csv");
        save_manifest(&path, &entries).unwrap();
        let cohort = load_manifest(&path).unwrap();
        assert_eq!(cohort.patient(0).label().time_days, 123.456789012345);
    }
}
