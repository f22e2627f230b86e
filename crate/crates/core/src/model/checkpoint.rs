//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `ACMILCK1`, a little-endian `u64` header length,
//! a JSON header, then every tensor as little-endian `f32` in header order.

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &[u8; 8] = b"ACMILCK1";

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Word position as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &rand_chacha::ChaCha8Rng) -> Self {
        RngState {
            seed,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<rand_chacha::ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self.word_pos.parse().map_err(|_| {
            Error::load(
                "checkpoint",
                format!("bad rng word position {:?}", self.word_pos),
            )
        })?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub step: u64,
    pub epoch: usize,
    pub rng: Option<RngState>,
    /// Free-form string metadata (ablation arm, fold, ...).
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams<f32>,
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams<f32>,
    step: u64,
    epoch: usize,
    rng: Option<RngState>,
    meta: BTreeMap<String, String>,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    for (name, t) in params.tensors() {
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.iter() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        config: config.clone(),
        step,
        epoch,
        rng,
        meta,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("checkpoint header", e))?;
    let mut bytes = Vec::with_capacity(16 + json.len() + data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&data);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let item = path.display().to_string();
    let fail = |reason: String| Error::load(item.clone(), reason);
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(fail("truncated header".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..len]).map_err(|e| fail(format!("header: {e}")))?;
    let data = &body[len..];
    if data.len() % 4 != 0 {
        return Err(fail("data section is not a whole number of f32".into()));
    }
    let values: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut params =
        ModelParams::<f32>::init(&header.config, 0).map_err(|e| fail(format!("config: {e}")))?;
    let expected: BTreeMap<String, TensorEntry> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.clone()))
        .collect();
    let mut used = 0;
    for (name, mut t) in params.tensors_mut() {
        let entry = expected
            .get(&name)
            .ok_or_else(|| fail(format!("missing tensor {name}")))?;
        if entry.shape != t.shape() {
            return Err(fail(format!(
                "tensor {name} has shape {:?}, config expects {:?}",
                entry.shape,
                t.shape()
            )));
        }
        let end = entry.offset + t.len();
        if end > values.len() {
            return Err(fail(format!("tensor {name} runs past the end of the file")));
        }
        for (dst, src) in t.iter_mut().zip(&values[entry.offset..end]) {
            *dst = *src;
        }
        used += 1;
    }
    if used != header.tensors.len() {
        return Err(fail(format!(
            "file has {} tensors, model has {used}",
            header.tensors.len()
        )));
    }
    Ok(Checkpoint { header, params })
}
