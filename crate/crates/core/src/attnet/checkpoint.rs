//! Checkpoint = JSON manifest + little-endian f64 blob.
//!
//! The blob holds every tensor row-major, concatenated in manifest order. It
//! lives next to the manifest with the extension `.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttnModel, Params};
use crate::geometry::LayerNormVariant;
use crate::linalg::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub name: String,
    pub shape: Vec<TensorEntry>,
    pub ln_variant: LayerNormVariant,
    pub causal: bool,
    pub seed: u64,
    /// Blob file name, relative to the manifest.
    pub blob: String,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint(
    model: &AttnModel,
    name: &str,
    seed: u64,
    manifest_path: impl AsRef<Path>,
) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let blob = blob_path(manifest_path);
    let mut bytes = Vec::with_capacity(model.params.count() * 8);
    let mut shape = Vec::new();
    for (tname, m) in model.params.tensors() {
        shape.push(TensorEntry {
            name: tname.to_string(),
            shape: [m.rows(), m.cols()],
        });
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        name: name.to_string(),
        shape,
        ln_variant: model.ln_variant,
        causal: model.causal,
        seed,
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))
}

pub fn load_checkpoint(manifest_path: impl AsRef<Path>) -> Result<(AttnModel, CheckpointManifest)> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let blob = manifest_path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let bad = |msg: String| Error::Parse {
        path: blob.clone(),
        line: 0,
        column: 0,
        msg,
    };
    let expected: usize = manifest.shape.iter().map(|t| t.shape[0] * t.shape[1] * 8).sum();
    if bytes.len() != expected {
        return Err(bad(format!("blob has {} bytes, manifest needs {expected}", bytes.len())));
    }
    let mut offset = 0;
    let mut take = |rows: usize, cols: usize| {
        let n = rows * cols;
        let data: Vec<f64> = bytes[offset..offset + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += 8 * n;
        Mat::from_vec(rows, cols, data)
    };
    let mut tensors = std::collections::HashMap::new();
    for t in &manifest.shape {
        tensors.insert(t.name.as_str(), take(t.shape[0], t.shape[1]));
    }
    let mut get = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| bad(format!("manifest lacks tensor `{name}`")))
    };
    let params = Params {
        embed: get("embed")?,
        pos: get("pos").ok(),
        query: get("query")?,
        key: get("key")?,
        value: get("value")?,
        head: get("head")?,
    };
    let d = params.embed.cols();
    for (name, m) in params.tensors() {
        let ok = match name {
            "embed" | "pos" => m.cols() == d,
            "head" => m.rows() == d,
            _ => m.shape() == (d, d),
        };
        if !ok {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: m.cols(),
            });
        }
        if !m.is_finite() {
            return Err(Error::NonFinite(format!("tensor `{name}` in {}", blob.display())));
        }
    }
    Ok((
        AttnModel {
            params,
            ln_variant: manifest.ln_variant,
            causal: manifest.causal,
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attnet::ModelShape;
    use rand::SeedableRng;

    #[test]
    fn round_trip_preserves_every_bit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let m = AttnModel::init(
            ModelShape {
                vocab: 7,
                d: 3,
                k_out: 7,
                max_len: Some(4),
            },
            LayerNormVariant::ProjectionOnly,
            true,
            0.3,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&m, "toy", 9, &path).unwrap();
        let (back, manifest) = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.seed, 9);
        assert_eq!(manifest.blob, "model.bin");
        assert_eq!(manifest.shape[1].name, "pos");
        let raw = fs::read(dir.path().join("model.bin")).unwrap();
        assert_eq!(raw.len(), m.params.count() * 8);
        assert_eq!(&raw[..8], &m.params.embed.get(0, 0).to_le_bytes());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = AttnModel::init(
            ModelShape {
                vocab: 3,
                d: 2,
                k_out: 2,
                max_len: None,
            },
            LayerNormVariant::FULL,
            false,
            0.3,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&m, "toy", 1, &path).unwrap();
        let blob = dir.path().join("m.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));
    }
}
