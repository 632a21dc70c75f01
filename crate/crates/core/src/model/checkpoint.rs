//! Model checkpoints.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic        4 bytes = "AMSM"
//! version      u32     = 1
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (model config, clustering
//!              config, seed, epoch)
//! param_count  u64
//! params       param_count f64 values in the documented flat order
//!              (see ModelParams::to_flat_vec)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMSM";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub clustering: ClusterConfig,
    pub seed: u64,
    pub epoch: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
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

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    header: &CheckpointHeader,
    params: &ModelParams,
) -> Result<()> {
    let path = path.as_ref();
    params.check_shapes(&header.model)?;
    let header_json = serde_json::to_vec(header).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        detail: format!("header serialization failed: {e}"),
    })?;
    let flat = params.to_flat_vec();

    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |e| io_err(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(write)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_FORMAT_VERSION)
        .map_err(write)?;
    w.write_u32::<LittleEndian>(header_json.len() as u32)
        .map_err(write)?;
    w.write_all(&header_json).map_err(write)?;
    w.write_u64::<LittleEndian>(flat.len() as u64).map_err(write)?;
    for v in flat {
        w.write_f64::<LittleEndian>(v).map_err(write)?;
    }
    w.flush().map_err(write)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| read_err(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        });
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| read_err(path, e))?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let header_len = r
        .read_u32::<LittleEndian>()
        .map_err(|e| read_err(path, e))? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|e| read_err(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("bad header JSON: {e}"),
        })?;

    let mut params = ModelParams::zeros(&header.model)?;
    let expected = params.flat_len() as u64;
    let count = r
        .read_u64::<LittleEndian>()
        .map_err(|e| read_err(path, e))?;
    if count != expected {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("parameter count {count} does not match config ({expected})"),
        });
    }
    let mut flat = vec![0.0f64; count as usize];
    r.read_f64_into::<LittleEndian>(&mut flat)
        .map_err(|e| read_err(path, e))?;
    params.copy_from_flat(&flat)?;

    Ok(Checkpoint { header, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, AttentionKind};

    fn header(config: ModelConfig) -> CheckpointHeader {
        CheckpointHeader {
            model: config,
            clustering: ClusterConfig {
                k: 6,
                seed: 42,
                ..ClusterConfig::default()
            },
            seed: 42,
            epoch: 17,
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.amsm");
        let mut config = ModelConfig::new(12);
        config.attention_kind = AttentionKind::Gated;
        let params = init_params(&config, 5).unwrap();
        save_checkpoint(&path, &header(config), &params).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.header.epoch, 17);
        assert_eq!(loaded.header.clustering.k, 6);
        assert_eq!(loaded.header.model, config);
        assert_eq!(loaded.params.to_flat_vec(), params.to_flat_vec());
    }

    #[test]
    fn identical_saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.amsm");
        let b = dir.path().join("b.amsm");
        let config = ModelConfig::new(4);
        let params = init_params(&config, 9).unwrap();
        save_checkpoint(&a, &header(config), &params).unwrap();
        save_checkpoint(&b, &header(config), &params).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.amsm");
        std::fs::write(&path, b"AMF1rest-of-file").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn rejects_truncated_blob() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.amsm");
        let config = ModelConfig::new(4);
        let params = init_params(&config, 9).unwrap();
        save_checkpoint(&path, &header(config), &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Truncated { .. })
        ));
    }
}
