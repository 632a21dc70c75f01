//! Binary patch-feature files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            4 bytes  = "AMF1"
//! format version   u32      = 1
//! id_len           u32
//! patient_id       id_len bytes, UTF-8
//! m                u32      number of patches
//! d                u32      feature dimension
//! features         m*d f32, row-major
//! coordinates      m records of (slide_index u16, x u32, y u32)
//! ```
//!
//! Survival labels deliberately live in the manifest, not here, so one
//! feature file can serve several label configurations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::data::cohort::PatchCoord;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"AMF1";
pub const FEATURE_FORMAT_VERSION: u32 = 1;

/// The label-free content of a feature file.
#[derive(Debug, Clone)]
pub struct FeaturePayload {
    pub patient_id: String,
    pub features: Array2<f32>,
    pub coords: Vec<PatchCoord>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_err(path: &Path, source: std::io::Error) -> Error {
    if source.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated {
            path: path.to_path_buf(),
        }
    } else {
        io_err(path, source)
    }
}

pub fn save_patient_features(
    path: impl AsRef<Path>,
    patient_id: &str,
    features: &Array2<f32>,
    coords: &[PatchCoord],
) -> Result<()> {
    let path = path.as_ref();
    let (m, d) = features.dim();
    if m == 0 {
        return Err(Error::EmptyBag);
    }
    if d == 0 {
        return Err(Error::InvalidArgument(
            "feature dimension must be positive".into(),
        ));
    }
    if coords.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{} coordinate records for {m} patches",
            coords.len()
        )));
    }

    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |e| io_err(path, e);
    w.write_all(FEATURE_MAGIC).map_err(write)?;
    w.write_u32::<LittleEndian>(FEATURE_FORMAT_VERSION)
        .map_err(write)?;
    w.write_u32::<LittleEndian>(patient_id.len() as u32)
        .map_err(write)?;
    w.write_all(patient_id.as_bytes()).map_err(write)?;
    w.write_u32::<LittleEndian>(m as u32).map_err(write)?;
    w.write_u32::<LittleEndian>(d as u32).map_err(write)?;
    for row in features.rows() {
        for &v in row {
            w.write_f32::<LittleEndian>(v).map_err(write)?;
        }
    }
    for c in coords {
        w.write_u16::<LittleEndian>(c.slide_index).map_err(write)?;
        w.write_u32::<LittleEndian>(c.x).map_err(write)?;
        w.write_u32::<LittleEndian>(c.y).map_err(write)?;
    }
    w.flush().map_err(write)?;
    Ok(())
}

pub fn load_patient_features(path: impl AsRef<Path>) -> Result<FeaturePayload> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| read_err(path, e))?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(FEATURE_MAGIC).into_owned(),
        });
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| read_err(path, e))?;
    if version != FEATURE_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let id_len = r
        .read_u32::<LittleEndian>()
        .map_err(|e| read_err(path, e))? as usize;
    let mut id_bytes = vec![0u8; id_len];
    r.read_exact(&mut id_bytes).map_err(|e| read_err(path, e))?;
    let patient_id = String::from_utf8(id_bytes).map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        detail: "patient id is not valid UTF-8".into(),
    })?;
    let m = r
        .read_u32::<LittleEndian>()
        .map_err(|e| read_err(path, e))? as usize;
    let d = r
        .read_u32::<LittleEndian>()
        .map_err(|e| read_err(path, e))? as usize;
    if m == 0 || d == 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("m = {m}, d = {d}: both must be positive"),
        });
    }

    let mut values = vec![0f32; m * d];
    r.read_f32_into::<LittleEndian>(&mut values)
        .map_err(|e| read_err(path, e))?;
    let features = Array2::from_shape_vec((m, d), values)
        .expect("shape matches the buffer length by construction");

    let mut coords = Vec::with_capacity(m);
    for _ in 0..m {
        let slide_index = r
            .read_u16::<LittleEndian>()
            .map_err(|e| read_err(path, e))?;
        let x = r
            .read_u32::<LittleEndian>()
            .map_err(|e| read_err(path, e))?;
        let y = r
            .read_u32::<LittleEndian>()
            .map_err(|e| read_err(path, e))?;
        coords.push(PatchCoord { slide_index, x, y });
    }

    Ok(FeaturePayload {
        patient_id,
        features,
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Seek;

    fn payload(m: usize, d: usize) -> (Array2<f32>, Vec<PatchCoord>) {
        let features =
            Array2::from_shape_fn((m, d), |(i, j)| (i * d + j) as f32 * 0.5 - 1.25);
        let coords = (0..m)
            .map(|i| PatchCoord {
                slide_index: (i % 3) as u16,
                x: (i * 500) as u32,
                y: (i * 250) as u32,
            })
            .collect();
        (features, coords)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.amf");
        let (features, coords) = payload(3, 2);
        save_patient_features(&path, "patient-1", &features, &coords).unwrap();
        let loaded = load_patient_features(&path).unwrap();
        assert_eq!(loaded.patient_id, "patient-1");
        assert_eq!(loaded.features, features);
        assert_eq!(loaded.coords, coords);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.amf");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            load_patient_features(&path),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.amf");
        let (features, coords) = payload(5, 4);
        save_patient_features(&path, "p", &features, &coords).unwrap();
        // Drop one feature row worth of bytes from the middle of the blob.
        let bytes = std::fs::read(&path).unwrap();
        let cut = bytes.len() - 5 * 10 - 4 * 4; // all coords plus one row
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(
            load_patient_features(&path),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn zero_patch_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.amf");
        let (features, coords) = payload(1, 2);
        save_patient_features(&path, "p", &features, &coords).unwrap();
        // Patch the stored m to zero: magic(4) + version(4) + id_len(4) + id(1).
        let mut f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
        f.seek(std::io::SeekFrom::Start(13)).unwrap();
        f.write_all(&0u32.to_le_bytes()).unwrap();
        drop(f);
        assert!(matches!(
            load_patient_features(&path),
            Err(Error::Malformed { .. })
        ));
    }
}
