//! Checkpoint container: `DLCK` magic, a little-endian `u32` format version,
//! a `u64` header length, a JSON header (architecture, vocabulary, schedule,
//! model family), then the flat parameter vector as little-endian `f64` bit
//! patterns. Round trips are bit-exact, including `−∞` logits.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Denoiser, Differentiable, MlpArch, MlpDenoiser, Model, TabularDenoiser};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::objectives::ModelFamily;
use crate::schedule::NoiseSchedule;
use crate::vocab::Vocab;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DLCK";

/// Architecture descriptor sufficient to rebuild a model from its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum ModelSpec {
    Tabular {
        vocab: Vocab,
        seq_len: usize,
        time_buckets: usize,
    },
    Mlp(MlpArch),
}

impl ModelSpec {
    pub fn vocab(&self) -> Vocab {
        match self {
            ModelSpec::Tabular { vocab, .. } => *vocab,
            ModelSpec::Mlp(a) => a.vocab,
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            ModelSpec::Tabular { seq_len, .. } => *seq_len,
            ModelSpec::Mlp(a) => a.seq_len,
        }
    }

    /// FLOPs of one forward evaluation, counted as for a single dense pass
    /// over the sequence (visibility masking is treated as free, as for
    /// attention masks).
    pub fn forward_flops(&self) -> f64 {
        match self {
            ModelSpec::Tabular { vocab, seq_len, .. } => 2.0 * (seq_len * vocab.size()) as f64,
            ModelSpec::Mlp(a) => a.forward_flops(super::VisibilityMode::Bidirectional),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Tabular {
                vocab,
                seq_len,
                time_buckets,
            } => TabularDenoiser::entry_count(*vocab, *seq_len, *time_buckets).unwrap_or(usize::MAX) * vocab.size(),
            ModelSpec::Mlp(a) => a.param_count(),
        }
    }

    pub fn build(&self, params: Vec<f64>) -> Result<Model> {
        Ok(match self {
            ModelSpec::Tabular {
                vocab,
                seq_len,
                time_buckets,
            } => Model::Tabular(TabularDenoiser::from_logits(*vocab, *seq_len, *time_buckets, params)?),
            ModelSpec::Mlp(arch) => Model::Mlp(MlpDenoiser::from_params(arch.clone(), params)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub family: ModelFamily,
    pub schedule: NoiseSchedule,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelSpec,
    family: ModelFamily,
    schedule: NoiseSchedule,
    param_count: usize,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model.spec(),
            family: self.family,
            schedule: self.schedule,
            param_count: self.model.param_count(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let params = self.model.params();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in params {
            out.extend_from_slice(&p.to_bits().to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(fail("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Mismatch(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| fail("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| fail(&e.to_string()))?;
        let data = &bytes[16 + hlen..];
        if data.len() != 8 * header.param_count {
            return Err(fail("parameter block length disagrees with header"));
        }
        let params = data
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(Self {
            model: header.model.build(params)?,
            family: header.family,
            schedule: header.schedule,
            metadata: header.metadata,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
