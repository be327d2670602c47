//! Binary checkpoint format.
//!
//! ```text
//! "KMBT" | u32 version (1) | u64 header length | header JSON
//! u32 tensor count | per tensor: u32 name length, name, u32 ndim, u32 dims…, f32 data
//! ```
//!
//! All integers and floats are little-endian. The header holds the run
//! configuration, the global step and optionally the vocabulary. Optimizer
//! moments, when present, are stored as tensors named `optim.m.<param>` and
//! `optim.v.<param>`; tensors are written in name order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::error::{Error as CrateError, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{AdamWState, Tensor};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 4] = b"KMBT";
pub const VERSION: u32 = 1;
const M_PREFIX: &str = "optim.m.";
const V_PREFIX: &str = "optim.v.";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("invalid checkpoint header: {0}")]
    Header(String),
    #[error("tensor `{name}` has shape {found:?}, configuration implies {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    global_step: u64,
    #[serde(default)]
    optimizer_step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ModelParams,
    pub optimizer: Option<AdamWState>,
    pub global_step: u64,
    pub vocab: Option<Vocabulary>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            global_step: self.global_step,
            optimizer_step: self.optimizer.as_ref().map_or(0, |o| o.step),
            vocab: self.vocab.as_ref().map(|v| v.tokens().to_vec()),
        };
        let json = serde_json::to_vec(&header).expect("serializable header");
        let mut tensors: BTreeMap<String, (Vec<usize>, &[f32])> = BTreeMap::new();
        for (name, t) in self.params.iter() {
            tensors.insert(name.clone(), (t.shape().to_vec(), t.data()));
        }
        if let Some(opt) = &self.optimizer {
            for (name, (m, v)) in &opt.moments {
                let shape = self.params.get(name).map_or(vec![m.len()], |t| t.shape().to_vec());
                tensors.insert(format!("{M_PREFIX}{name}"), (shape.clone(), m));
                tensors.insert(format!("{V_PREFIX}{name}"), (shape, v));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, (shape, data)) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in &shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint. Tensor shapes are checked against `expected`
    /// when given, otherwise against the embedded model configuration.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let len = r.u64("header length")?;
        let json = r.take(usize::try_from(len).unwrap_or(usize::MAX), "header")?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let count = r.u32("tensor count")?;
        let mut raw = BTreeMap::new();
        for i in 0..count {
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| CheckpointError::Header(format!("tensor {i}: name is not UTF-8")))?
                .to_string();
            let ndim = r.u32("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u32("tensor dims")? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| CheckpointError::Truncated(format!("data of `{name}`")))?;
            let data = r.take(n.saturating_mul(4), &format!("data of `{name}`"))?;
            let data: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            raw.insert(name, (shape, data));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }

        let model_cfg = expected.unwrap_or(&header.config.model);
        let mut params = BTreeMap::new();
        for (name, shape) in model_cfg.param_shapes() {
            let (found, data) = raw.remove(&name).ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            if found != shape {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: shape,
                    found,
                });
            }
            params.insert(name, Tensor::new(shape, data).expect("shape checked"));
        }
        let mut moments: BTreeMap<String, (Vec<f32>, Vec<f32>)> = BTreeMap::new();
        for (name, (_, data)) in raw {
            if let Some(p) = name.strip_prefix(M_PREFIX) {
                moments.entry(p.to_string()).or_default().0 = data;
            } else if let Some(p) = name.strip_prefix(V_PREFIX) {
                moments.entry(p.to_string()).or_default().1 = data;
            } else {
                return Err(CheckpointError::UnexpectedTensor(name));
            }
        }
        for (name, (m, v)) in &moments {
            let want = params.get(name).map(Tensor::len);
            if want != Some(m.len()) || want != Some(v.len()) {
                return Err(CheckpointError::UnexpectedTensor(format!("{M_PREFIX}{name}")));
            }
        }
        let mut config = header.config;
        if let Some(e) = expected {
            config.model = e.clone();
        }
        let params = ModelParams::from_tensors(&config.model, params)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let vocab = match header.vocab {
            Some(tokens) => Some(
                Vocabulary::from_tokens(tokens).map_err(|e| CheckpointError::Header(e.to_string()))?,
            ),
            None => None,
        };
        let optimizer = (!moments.is_empty() || header.optimizer_step > 0).then_some(AdamWState {
            step: header.optimizer_step,
            moments,
        });
        Ok(Checkpoint {
            config,
            params,
            optimizer,
            global_step: header.global_step,
            vocab,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| CrateError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CrateError::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes, None)?)
}

/// Loads a checkpoint whose parameters must have the shapes `model` implies.
pub fn load_checkpoint_for(path: &Path, model: &ModelConfig) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CrateError::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes, Some(model))?)
}
