//! Checkpoint directories: one raw little-endian f32 file per parameter
//! group, a JSON manifest with shapes and SHA-256 digests, and the vocabulary.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Scalar;
use crate::error::{Error, Result};
use crate::langmodel::Vocabulary;
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.json";

/// Groups every complete model carries.
pub const REQUIRED_GROUPS: [&str; 10] = [
    "bridge.gate",
    "bridge.proj1",
    "bridge.proj2",
    "contrastive.tau",
    "encoder.blocks",
    "encoder.patch3d",
    "encoder.pos_depth",
    "encoder.pos_spatial",
    "lm.blocks",
    "lm.embed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub key: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub file: String,
    pub tensors: Vec<TensorEntry>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// Completed stages, oldest first (for example `["lm", "1", "2a"]`).
    pub provenance: Vec<String>,
    pub model: ModelConfig,
    pub groups: Vec<GroupEntry>,
    /// Free-form snapshot of the experiment configuration.
    pub config: serde_json::Value,
}

impl CheckpointManifest {
    pub fn last_stage(&self) -> Option<&str> {
        self.provenance.last().map(String::as_str)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Row-major little-endian f32 bytes of every tensor in `group`, in key order.
pub fn encode_group<S: Scalar>(store: &ParamStore<S>, group: &str) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut tensors = Vec::new();
    let mut bytes = Vec::new();
    for (k, a) in store.group(group) {
        tensors.push(TensorEntry {
            key: k.clone(),
            shape: [a.nrows(), a.ncols()],
        });
        for v in a.iter() {
            bytes.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    (tensors, bytes)
}

fn decode_group<S: Scalar>(entry: &GroupEntry, bytes: &[u8], store: &mut ParamStore<S>) -> Result<()> {
    let total: usize = entry.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
    if bytes.len() != total * 4 {
        return Err(Error::Integrity(format!(
            "group {} holds {} bytes, manifest expects {}",
            entry.name,
            bytes.len(),
            total * 4
        )));
    }
    let mut chunks = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for t in &entry.tensors {
        let vals: Vec<S> = chunks
            .by_ref()
            .take(t.shape[0] * t.shape[1])
            .map(|v| S::from_f32(v).unwrap_or_else(S::nan))
            .collect();
        let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), vals).map_err(|e| Error::Shape(e.to_string()))?;
        store.insert(t.key.clone(), a);
    }
    Ok(())
}

fn staging_dir(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    dir.with_file_name(name)
}

/// Writes `model` to `dir`, replacing any previous checkpoint there only
/// once the new one is complete.
pub fn save_checkpoint<S: Scalar>(
    dir: &Path,
    model: &Model<S>,
    provenance: &[String],
    config: serde_json::Value,
) -> Result<CheckpointManifest> {
    let stage = staging_dir(dir);
    if stage.exists() {
        fs::remove_dir_all(&stage)?;
    }
    fs::create_dir_all(&stage)?;
    let mut groups = Vec::new();
    for name in model.store.groups() {
        let (tensors, bytes) = encode_group(&model.store, &name);
        let file = format!("{name}.f32");
        fs::write(stage.join(&file), &bytes)?;
        groups.push(GroupEntry {
            name,
            file,
            tensors,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        provenance: provenance.to_vec(),
        model: model.cfg,
        groups,
        config,
    };
    fs::write(stage.join(VOCAB_FILE), model.vocab.to_json())?;
    fs::write(stage.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&stage, dir)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Integrity(format!("no checkpoint manifest at {}", path.display())));
    }
    let m: CheckpointManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Integrity(format!("unsupported format version {}", m.format_version)));
    }
    Ok(m)
}

/// Loads and verifies a checkpoint.
pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<(Model<S>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    for g in REQUIRED_GROUPS {
        if !manifest.groups.iter().any(|e| e.name == g) {
            return Err(Error::MissingGroup(g.to_string()));
        }
    }
    let mut store = ParamStore::new();
    for entry in &manifest.groups {
        let bytes = fs::read(dir.join(&entry.file))?;
        let digest = sha256_hex(&bytes);
        if digest != entry.sha256 {
            return Err(Error::Integrity(format!(
                "digest mismatch for group {}: manifest {}, file {digest}",
                entry.name, entry.sha256
            )));
        }
        decode_group(entry, &bytes, &mut store)?;
    }
    let vocab = Vocabulary::from_json(&fs::read_to_string(dir.join(VOCAB_FILE))?)?;
    manifest.model.validate()?;
    Ok((
        Model {
            cfg: manifest.model,
            vocab,
            store,
        },
        manifest,
    ))
}
