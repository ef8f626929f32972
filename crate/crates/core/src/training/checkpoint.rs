//! Binary checkpoints: magic line, one-line JSON header, little-endian f64 blobs.
//!
//! Saving the same state twice produces identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::AdamState;
use super::trainer::{Stage, TrainConfig, Trainer};
use crate::corpus::write_atomic;
use crate::error::{Error, Result};
use crate::model::{HiVt5Config, HiVt5Model, Vocab};
use crate::nn::{ParamGroup, ParamStore};
use crate::rng::{Rng, RngState};

pub const CHECKPOINT_MAGIC: &[u8] = b"HIVT5CKPT\n";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the blob section.
    pub offset: u64,
    /// Number of f64 values.
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub stage: Option<Stage>,
    pub step: u64,
    pub seed: u64,
    pub rng: RngState,
    pub model: HiVt5Config,
    pub train: TrainConfig,
    pub vocab: Vec<String>,
    pub adam_step: u64,
    pub blobs: Vec<BlobEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serialises the full training state.
pub fn checkpoint_bytes(t: &Trainer) -> Result<Vec<u8>> {
    let mut blobs = Vec::new();
    let mut body: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: &[usize], data: &[f64]| {
        blobs.push(BlobEntry {
            name,
            shape: shape.to_vec(),
            offset: body.len() as u64,
            len: data.len() as u64,
        });
        for v in data {
            body.extend_from_slice(&v.to_le_bytes());
        }
    };
    let entries = t.model.store.entries();
    for e in entries {
        push(format!("param/{}", e.name), e.tensor.shape(), e.tensor.data());
    }
    for (k, e) in entries.iter().enumerate() {
        push(format!("adam_m/{}", e.name), e.tensor.shape(), &t.adam.m[k]);
    }
    for (k, e) in entries.iter().enumerate() {
        push(format!("adam_v/{}", e.name), e.tensor.shape(), &t.adam.v[k]);
    }
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        stage: t.stage,
        step: t.step,
        seed: t.seed,
        rng: t.rng.state(),
        model: t.model.config.clone(),
        train: t.train.clone(),
        vocab: t.model.vocab.words().to_vec(),
        adam_step: t.adam.step,
        blobs,
    };
    let json = serde_json::to_string(&header).map_err(|e| corrupt(format!("header encoding: {e}")))?;
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + json.len() + 1 + body.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&body);
    Ok(out)
}

/// Splits a checkpoint into its header and blob section.
pub fn parse_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC)
        .ok_or_else(|| corrupt("not a checkpoint (bad magic)"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..nl]).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(corrupt(format!(
            "format_version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
            header.format_version
        )));
    }
    Ok((header, &rest[nl + 1..]))
}

fn read_blob(body: &[u8], b: &BlobEntry) -> Result<Vec<f64>> {
    let start = usize::try_from(b.offset).map_err(|_| corrupt("blob offset overflow"))?;
    let n = usize::try_from(b.len).map_err(|_| corrupt("blob length overflow"))?;
    let end = n
        .checked_mul(8)
        .and_then(|l| start.checked_add(l))
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt(format!("blob {} runs past the end of the file", b.name)))?;
    if b.shape.iter().product::<usize>() != n {
        return Err(corrupt(format!("blob {} has shape {:?} but {n} values", b.name, b.shape)));
    }
    Ok(body[start..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Restores a trainer. The model is rebuilt from its config and vocabulary,
/// then every parameter and optimizer buffer is overwritten; any missing,
/// extra or mis-shaped blob is an error.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Trainer> {
    let (h, body) = parse_header(bytes)?;
    let vocab = Vocab::from_words(h.vocab.clone()).map_err(|e| corrupt(format!("vocabulary: {e}")))?;
    let mut model = HiVt5Model::new(h.model.clone(), vocab, h.seed).map_err(|e| corrupt(format!("model config: {e}")))?;
    let n = model.store.len();
    if h.blobs.len() != 3 * n {
        return Err(corrupt(format!("expected {} blobs, found {}", 3 * n, h.blobs.len())));
    }
    let mut adam = AdamState::new(&model.store);
    adam.step = h.adam_step;
    let ids: Vec<_> = model.store.ids().collect();
    for (k, &id) in ids.iter().enumerate() {
        let e = model.store.entry(id);
        let (name, shape) = (e.name.clone(), e.tensor.shape().to_vec());
        for (kind, b) in [("param", &h.blobs[k]), ("adam_m", &h.blobs[n + k]), ("adam_v", &h.blobs[2 * n + k])] {
            let want = format!("{kind}/{name}");
            if b.name != want {
                return Err(corrupt(format!("expected blob {want}, found {}", b.name)));
            }
            if b.shape != shape {
                return Err(corrupt(format!("blob {want} has shape {:?}, model expects {shape:?}", b.shape)));
            }
            let data = read_blob(body, b)?;
            match kind {
                "param" => model.store.set_data(id, data)?,
                "adam_m" => adam.m[k] = data,
                _ => adam.v[k] = data,
            }
        }
    }
    Trainer::from_parts(model, h.train, h.stage, h.step, h.seed, Rng::from_state(h.rng), adam)
}

pub fn save_checkpoint(t: &Trainer, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(t)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

/// Hex SHA-256 of each parameter of `group`, in store order, as `(name, digest)`.
pub fn group_digests(store: &ParamStore, group: ParamGroup) -> Vec<(String, String)> {
    store
        .entries()
        .iter()
        .filter(|e| e.group == group)
        .map(|e| {
            let mut h = Sha256::new();
            for v in e.tensor.data() {
                h.update(v.to_le_bytes());
            }
            (e.name.clone(), hex::encode(h.finalize()))
        })
        .collect()
}
