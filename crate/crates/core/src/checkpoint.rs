//! Versioned binary checkpoint.
//!
//! ```text
//! 8 bytes   magic  b"MIMCKPT\0"
//! 4 bytes   u32 LE format version
//! 8 bytes   u64 LE header length H
//! H bytes   JSON header: format_version, model config, parameter manifest
//!           (name, shape, byte offset), payload length, SHA-256 of payload
//! payload   every parameter as little-endian f64, in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MimError, Result};
use crate::model::{MimModel, ModelConfig};

pub const MAGIC: &[u8; 8] = b"MIMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: Vec<ManifestEntry>,
    pub payload_bytes: u64,
    pub sha256: String,
}

fn manifest(model: &MimModel) -> Vec<ManifestEntry> {
    let mut offset = 0u64;
    model
        .params
        .iter()
        .map(|(name, t)| {
            let e = ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.numel() as u64;
            e
        })
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes a model to checkpoint bytes.
pub fn to_bytes(model: &MimModel) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(model.params.total_numel() * 8);
    for (_, t) in model.params.iter() {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        params: manifest(model),
        payload_bytes: payload.len() as u64,
        sha256: hex(&Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses checkpoint bytes, validating version, manifest, length and checksum.
pub fn from_bytes(bytes: &[u8]) -> Result<MimModel> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(MimError::CheckpointMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(MimError::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(MimError::CheckpointTruncated {
            expected: 20 + hlen,
            found: bytes.len(),
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
    if header.format_version != FORMAT_VERSION {
        return Err(MimError::CheckpointVersion {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let mut model = MimModel::layout(&header.config)?;
    let expected_manifest = manifest(&model);
    if header.params != expected_manifest {
        let diff = header
            .params
            .iter()
            .zip(&expected_manifest)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("{} {:?} vs expected {} {:?}", a.name, a.shape, b.name, b.shape))
            .unwrap_or_else(|| {
                format!(
                    "{} entries vs expected {}",
                    header.params.len(),
                    expected_manifest.len()
                )
            });
        return Err(MimError::CheckpointManifest(diff));
    }
    let payload = &body[hlen..];
    let expected = model.params.total_numel() * 8;
    if header.payload_bytes as usize != expected {
        return Err(MimError::CheckpointManifest(format!(
            "header declares {} payload bytes, parameters need {expected}",
            header.payload_bytes
        )));
    }
    if payload.len() < expected {
        return Err(MimError::CheckpointTruncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(MimError::CheckpointManifest(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    if hex(&Sha256::digest(payload)) != header.sha256 {
        return Err(MimError::CheckpointChecksum);
    }
    let mut chunks = payload.chunks_exact(8);
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v = f64::from_le_bytes(chunks.next().expect("length checked").try_into().expect("8 bytes"));
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &MimModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MimModel> {
    let bytes = fs::read(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => MimError::MissingCheckpoint(path.to_path_buf()),
        _ => MimError::File {
            path: path.to_path_buf(),
            source,
        },
    })?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and requires its model config to equal `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<MimModel> {
    let model = load_checkpoint(path)?;
    if model.config() != expected {
        let what = if model.config().n_regions != expected.n_regions {
            format!(
                "checkpoint has {} regions, run expects {}",
                model.config().n_regions,
                expected.n_regions
            )
        } else {
            "model configurations differ".to_string()
        };
        return Err(MimError::CheckpointConfig(what));
    }
    Ok(model)
}
