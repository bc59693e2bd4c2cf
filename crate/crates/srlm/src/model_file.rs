// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `.srlm` model container.
//!
//! ```text
//! "SRLM" | version: u32 LE | header_len: u64 LE | header (UTF-8 JSON) | f32 LE data
//! ```
//!
//! Tensor offsets in the header are byte offsets into the data section.
//! Tensors are stored row-major, back to back, in the model's canonical
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use srlm_core::rwkv::{RwkvConfig, RwkvModel};
use srlm_core::tensors::{NamedTensor, TensorSet};
use srlm_core::threshold::Arch;
use srlm_core::transformer::{TransformerConfig, TransformerModel};

use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 4] = b"SRLM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub arch: Arch,
    pub vocab_size: usize,
    pub n_blocks: usize,
    pub d_model: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_positions: Option<usize>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Rwkv(RwkvModel),
    Transformer(TransformerModel),
}

/// Evaluates `$body` with `$m` bound to the concrete model.
#[macro_export]
macro_rules! with_model {
    ($model:expr, $m:ident => $body:expr) => {
        match $model {
            $crate::model_file::Model::Rwkv($m) => $body,
            $crate::model_file::Model::Transformer($m) => $body,
        }
    };
}

impl Model {
    pub fn arch(&self) -> Arch {
        match self {
            Model::Rwkv(_) => Arch::Rwkv,
            Model::Transformer(_) => Arch::Transformer,
        }
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        with_model!(self, m => m.named_tensors())
    }

    pub fn d_model(&self) -> usize {
        match self {
            Model::Rwkv(m) => m.config().d_model,
            Model::Transformer(m) => m.config().d_model,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(NamedTensor::numel).sum()
    }

    /// Header describing this model's tensors, without data.
    pub fn header(&self) -> Header {
        let mut offset = 0u64;
        let tensors = self
            .named_tensors()
            .into_iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name,
                    shape: t.shape,
                    offset,
                };
                offset += 4 * t.data.len() as u64;
                e
            })
            .collect();
        let (vocab_size, n_blocks, d_model, n_heads, max_positions) = match self {
            Model::Rwkv(m) => {
                let c = m.config();
                (c.vocab_size, c.n_blocks, c.d_model, None, None)
            }
            Model::Transformer(m) => {
                let c = m.config();
                (
                    c.vocab_size,
                    c.n_blocks,
                    c.d_model,
                    Some(c.n_heads),
                    Some(c.max_positions),
                )
            }
        };
        Header {
            arch: self.arch(),
            vocab_size,
            n_blocks,
            d_model,
            n_heads,
            max_positions,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let tensors = self.named_tensors();
        let data_len: usize = tensors.iter().map(|t| 4 * t.data.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a model file. `Err` carries a human-readable reason.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err("not an SRLM model file".into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let data_start = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(16))
            .filter(|&s| s <= bytes.len())
            .ok_or("header length exceeds file size")?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| format!("bad header: {e}"))?;
        let data = &bytes[data_start..];

        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let numel: usize = e.shape.iter().product();
            if e.offset != expected {
                return Err(format!("tensor {} at offset {}, expected {expected}", e.name, e.offset));
            }
            let start = e.offset as usize;
            let end = start + 4 * numel;
            if end > data.len() {
                return Err(format!("tensor {} runs past the end of the file", e.name));
            }
            let values = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: values,
            });
            expected = end as u64;
        }
        if expected as usize != data.len() {
            return Err(format!(
                "{} trailing bytes after the last tensor",
                data.len() - expected as usize
            ));
        }
        Self::from_parts(&header, tensors).map_err(|e| e.to_string())
    }

    /// Assembles a model from a header's configuration and its tensors.
    pub fn from_parts(header: &Header, tensors: Vec<NamedTensor>) -> srlm_core::Result<Self> {
        let set = TensorSet::new(tensors)?;
        match header.arch {
            Arch::Rwkv => {
                let config = RwkvConfig {
                    vocab_size: header.vocab_size,
                    n_blocks: header.n_blocks,
                    d_model: header.d_model,
                };
                Ok(Model::Rwkv(RwkvModel::from_tensors(config, set)?))
            }
            Arch::Transformer => {
                let missing = |f: &str| srlm_core::Error::InvalidConfig(format!("transformer header lacks {f}"));
                let config = TransformerConfig {
                    vocab_size: header.vocab_size,
                    n_blocks: header.n_blocks,
                    d_model: header.d_model,
                    n_heads: header.n_heads.ok_or_else(|| missing("n_heads"))?,
                    max_positions: header.max_positions.ok_or_else(|| missing("max_positions"))?,
                };
                Ok(Model::Transformer(TransformerModel::from_tensors(config, set)?))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = error::read(path)?;
        Self::from_bytes(&bytes).map_err(|m| Error::corrupt(path, m))
    }
}

/// Raw tensor dump: `index.json` (a [`Header`] whose offsets are unused)
/// plus one little-endian f32 file per tensor, `<name>.bin`.
pub mod raw {
    use super::*;

    pub const INDEX: &str = "index.json";

    pub fn export(model: &Model, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = model.header();
        error::write(
            &dir.join(INDEX),
            serde_json::to_string_pretty(&header).expect("header serializes"),
        )?;
        for t in model.named_tensors() {
            let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            error::write(&dir.join(format!("{}.bin", t.name)), bytes)?;
        }
        Ok(())
    }

    pub fn import(dir: &Path) -> Result<Model> {
        let index = dir.join(INDEX);
        let header: Header = serde_json::from_str(&error::read_string(&index)?)
            .map_err(|e| Error::corrupt(&index, e.to_string()))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let path = dir.join(format!("{}.bin", e.name));
            let bytes = error::read(&path)?;
            let numel: usize = e.shape.iter().product();
            if bytes.len() != 4 * numel {
                return Err(Error::corrupt(
                    &path,
                    format!("{} bytes for a tensor of {numel} elements", bytes.len()),
                ));
            }
            tensors.push(NamedTensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            });
        }
        Model::from_parts(&header, tensors).map_err(|e| Error::corrupt(&index, e.to_string()))
    }
}
