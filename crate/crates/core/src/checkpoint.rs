//! Parameter checkpoint files.
//!
//! Layout: one UTF-8 JSON manifest line terminated by `\n`, then the raw
//! little-endian 32-bit float payload of every parameter, concatenated in
//! manifest order. The manifest carries everything needed to rebuild the
//! models without the training code:
//!
//! ```text
//! {"magic":"ckpt1","model":"gan","step":500,"config_digest":"…",
//!  "arch":{…},"rng":{…}?,
//!  "params":[{"group":"generator","name":"g0.stage0.weight",
//!             "shape":[32,32,1,1,4],"offset":0,"len":4096,
//!             "kind":{"weight":{"out_axis":1}}}, …]}
//! ```
//!
//! `offset`/`len` count f32 values from the start of the payload.

use crate::nn::init::{ParamEntry, ParamKind, ParamSet};
use crate::nn::Tensor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &str = "ckpt1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected \"ckpt1\", got {0:?}")]
    BadMagic(String),
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error("truncated payload: expected {expected} floats, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("parameter {name}: shape {shape:?} does not match len {len}")]
    ShapeMismatch { name: String, shape: Vec<usize>, len: usize },
    #[error("checkpoint is for model {got:?}, expected {expected:?}")]
    ModelMismatch { expected: String, got: String },
    #[error("config digest mismatch: checkpoint {checkpoint}, config {config}")]
    DigestMismatch { checkpoint: String, config: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum KindSer {
    Weight { out_axis: usize },
    Bias,
}

impl From<ParamKind> for KindSer {
    fn from(k: ParamKind) -> Self {
        match k {
            ParamKind::Weight { out_axis } => KindSer::Weight { out_axis },
            ParamKind::Bias => KindSer::Bias,
        }
    }
}

impl From<&KindSer> for ParamKind {
    fn from(k: &KindSer) -> Self {
        match k {
            KindSer::Weight { out_axis } => ParamKind::Weight { out_axis: *out_axis },
            KindSer::Bias => ParamKind::Bias,
        }
    }
}

/// Serializable RNG state of the training stream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RngStateSer {
    pub seed_hex: String,
    pub stream: u64,
    /// u128 word position as a decimal string.
    pub word_pos: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamRecord {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
    kind: KindSer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    magic: String,
    model: String,
    step: u64,
    config_digest: String,
    arch: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    rng: Option<RngStateSer>,
    params: Vec<ParamRecord>,
}

/// Everything read back from a checkpoint, model-agnostic.
#[derive(Debug)]
pub struct ParamFile {
    pub model: String,
    pub step: u64,
    pub config_digest: String,
    pub arch: serde_json::Value,
    pub rng: Option<RngStateSer>,
    /// `(group, set)` in file order.
    pub groups: Vec<(String, ParamSet)>,
}

#[allow(clippy::too_many_arguments)]
pub fn write_param_file(
    path: &Path,
    model: &str,
    step: u64,
    config_digest: &str,
    arch: serde_json::Value,
    rng: Option<RngStateSer>,
    groups: &[(&str, &ParamSet)],
) -> Result<(), CheckpointError> {
    let mut params = Vec::new();
    let mut offset = 0usize;
    for (group, set) in groups {
        for entry in &set.entries {
            let len = entry.tensor.numel();
            params.push(ParamRecord {
                group: group.to_string(),
                name: entry.name.clone(),
                shape: entry.tensor.shape.clone(),
                offset,
                len,
                kind: entry.kind.into(),
            });
            offset += len;
        }
    }
    let manifest = Manifest {
        magic: MAGIC.to_string(),
        model: model.to_string(),
        step,
        config_digest: config_digest.to_string(),
        arch,
        rng,
        params,
    };
    let mut w = BufWriter::new(File::create(path)?);
    let line = serde_json::to_string(&manifest).map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    for (_, set) in groups {
        for entry in &set.entries {
            for &v in &entry.tensor.data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_param_file(path: &Path) -> Result<ParamFile, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(CheckpointError::BadManifest("missing newline after manifest".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
    }
    let text = String::from_utf8(line).map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
    if manifest.magic != MAGIC {
        return Err(CheckpointError::BadMagic(manifest.magic));
    }

    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let total: usize = manifest.params.iter().map(|p| p.len).sum();
    if bytes.len() < total * 4 {
        return Err(CheckpointError::TruncatedPayload { expected: total, got: bytes.len() / 4 });
    }
    let floats: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();

    let mut groups: Vec<(String, ParamSet)> = Vec::new();
    for record in &manifest.params {
        if record.shape.iter().product::<usize>() != record.len {
            return Err(CheckpointError::ShapeMismatch {
                name: record.name.clone(),
                shape: record.shape.clone(),
                len: record.len,
            });
        }
        if record.offset + record.len > floats.len() {
            return Err(CheckpointError::TruncatedPayload { expected: total, got: floats.len() });
        }
        let tensor = Tensor::new(
            record.shape.clone(),
            floats[record.offset..record.offset + record.len].to_vec(),
        );
        let entry = ParamEntry { name: record.name.clone(), tensor, kind: (&record.kind).into() };
        match groups.last_mut() {
            Some((g, set)) if *g == record.group => set.entries.push(entry),
            _ => {
                let mut set = ParamSet::new();
                set.entries.push(entry);
                groups.push((record.group.clone(), set));
            }
        }
    }
    Ok(ParamFile {
        model: manifest.model,
        step: manifest.step,
        config_digest: manifest.config_digest,
        arch: manifest.arch,
        rng: manifest.rng,
        groups,
    })
}
