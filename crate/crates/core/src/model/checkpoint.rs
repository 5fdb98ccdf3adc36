//! Checkpoint directories: `manifest.json` plus one TNS1 file per tensor.
//!
//! TNS1 layout: "TNS1", u8 rank, `rank` u32 dims, then float32 LE payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::binio::{put_f32s, ByteReader};
use crate::error::{Error, Result};

pub const TNS_MAGIC: &[u8; 4] = b"TNS1";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerRecord {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub architecture: ModelConfig,
    pub speakers: usize,
    pub vertices: usize,
    pub fusion_mode: String,
    pub seed: u64,
    pub frame_rate: u16,
    /// Describes how text features were produced, e.g. `pseudo:0` or `file:emb.wem`.
    pub embeddings: String,
    pub optimizer: Option<OptimizerRecord>,
    pub tensors: Vec<TensorRecord>,
}

/// Metadata stored alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub frame_rate: u16,
    pub embeddings: String,
    pub optimizer: Option<OptimizerRecord>,
}

pub fn write_tensor<W: Write>(shape: &[usize], values: impl IntoIterator<Item = f64>, mut sink: W) -> Result<()> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::Dimension("tensor rank exceeds 255".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(TNS_MAGIC);
    buf.push(shape.len() as u8);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Dimension(format!("tensor dim {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    put_f32s(&mut buf, values.into_iter().map(|v| v as f32));
    sink.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut source: R) -> Result<ArrayD<f64>> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes);
    r.magic(TNS_MAGIC)?;
    let rank = r.u8("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("dimension")? as usize);
    }
    let count = shape.iter().product::<usize>();
    let payload = r.finite_f32s(count, "tensor payload")?;
    r.finish("tensor payload")?;
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), payload.into_iter().map(f64::from).collect())
        .expect("shape matches payload"))
}

fn manifest_for(params: &ModelParams, meta: &CheckpointMeta) -> CheckpointManifest {
    let tensors = params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| TensorRecord {
            file: format!("{name}.tns"),
            name,
            shape: t.shape().to_vec(),
        })
        .collect();
    CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        architecture: params.config.clone(),
        speakers: params.config.speakers,
        vertices: params.config.vertices,
        fusion_mode: params.config.fusion.to_string(),
        seed: meta.seed,
        frame_rate: meta.frame_rate,
        embeddings: meta.embeddings.clone(),
        optimizer: meta.optimizer,
        tensors,
    }
}

pub fn save_checkpoint(dir: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let manifest = manifest_for(params, meta);
    for ((_, tensor), record) in params.named_tensors().into_iter().zip(&manifest.tensors) {
        let file = fs::File::create(dir.join(&record.file))?;
        let mut w = std::io::BufWriter::new(file);
        write_tensor(tensor.shape(), tensor.iter().copied(), &mut w)?;
        w.flush()?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest_json(&manifest))?;
    Ok(manifest)
}

pub fn manifest_json(manifest: &CheckpointManifest) -> String {
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    s
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let config = &manifest.architecture;
    if config.speakers != manifest.speakers
        || config.vertices != manifest.vertices
        || config.fusion.to_string() != manifest.fusion_mode
    {
        return Err(Error::Config("checkpoint manifest fields disagree with its architecture".into()));
    }
    let mut params = ModelParams::zeros(config)?;
    {
        let mut slots = params.named_tensors_mut();
        if slots.len() != manifest.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint lists {} tensors, architecture has {}",
                manifest.tensors.len(),
                slots.len()
            )));
        }
        for ((name, slot), record) in slots.iter_mut().zip(&manifest.tensors) {
            if *name != record.name {
                return Err(Error::Config(format!(
                    "tensor order mismatch: expected {name}, manifest has {}",
                    record.name
                )));
            }
            let value = read_tensor(fs::File::open(dir.join(&record.file))?)?;
            if value.shape() != slot.shape() || record.shape != slot.shape() {
                return Err(Error::Dimension(format!(
                    "tensor {name} has shape {:?}, architecture expects {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            slot.assign(&value);
        }
    }
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FusionMode;

    #[test]
    fn tensor_round_trip() {
        let mut bytes = Vec::new();
        write_tensor(&[2, 3], (0..6).map(|v| v as f64 * 0.5), &mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 8 + 24);
        let t = read_tensor(&bytes[..]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t[[1, 2]], 2.5);
        assert!(read_tensor(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut config = ModelConfig::standard(2, 5, FusionMode::Concat);
        config.mel_channels = 3;
        config.text_dim = 4;
        let params = ModelParams::init(&config, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = CheckpointMeta {
            seed: 11,
            frame_rate: 25,
            embeddings: "pseudo:0".into(),
            optimizer: None,
        };
        save_checkpoint(dir.path(), &params, &meta).unwrap();
        let (loaded, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest.seed, 11);
        for ((_, a), (_, b)) in params.named_tensors().iter().zip(loaded.named_tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }
}
