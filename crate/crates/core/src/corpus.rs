// SPDX-License-Identifier: MIT OR Apache-2.0

//! Byte-level documents and deterministic dataset splits.
//!
//! File and directory loading lives in the `srlm` crate; this module only
//! deals with bytes already in memory.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Token prepended to every byte-level document.
pub const BOS: u32 = 256;
/// 256 byte values plus [`BOS`].
pub const BYTE_VOCAB: usize = 257;
/// Default truncation length for calibration and evaluation documents.
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Document {
    tokens: Vec<u32>,
    pub source: String,
}

impl Document {
    pub fn new(tokens: Vec<u32>, source: impl Into<String>, vocab_size: usize) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::Empty("document needs at least two tokens"));
        }
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange {
                token,
                vocab: vocab_size,
            });
        }
        Ok(Self {
            tokens,
            source: source.into(),
        })
    }

    /// Byte-level document, optionally prefixed with [`BOS`].
    pub fn from_bytes(bytes: &[u8], source: impl Into<String>, bos: bool) -> Result<Self> {
        Self::new(tokenize(bytes, bos), source, BYTE_VOCAB)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keeps at most the first `max_len` tokens (never fewer than 2).
    pub fn truncate(&mut self, max_len: usize) {
        self.tokens.truncate(max_len.max(2));
    }
}

pub fn tokenize(bytes: &[u8], bos: bool) -> Vec<u32> {
    let mut out = Vec::with_capacity(bytes.len() + 1);
    if bos {
        out.push(BOS);
    }
    out.extend(bytes.iter().map(|&b| u32::from(b)));
    out
}

/// Inverse of [`tokenize`]; [`BOS`] and any id above 255 are dropped.
pub fn detokenize(tokens: &[u32]) -> Vec<u8> {
    tokens
        .iter()
        .filter_map(|&t| u8::try_from(t).ok())
        .collect()
}

/// Splits text into records separated by one or more blank lines.
/// Records are trimmed of surrounding newlines; empty records are dropped.
pub fn split_records(text: &str) -> Vec<&str> {
    let mut records = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let blank = line.trim().is_empty();
        if blank {
            if let Some(s) = start.take() {
                records.push(&text[s..end]);
            }
        } else {
            start.get_or_insert(offset);
            end = offset + line.trim_end_matches(['\n', '\r']).len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        records.push(&text[s..end]);
    }
    records
}

/// Parses one line of space-separated token ids.
pub fn parse_ids(line: &str) -> Result<Vec<u32>> {
    line.split_whitespace()
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| Error::InvalidConfig(format!("bad token id {s:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitConfig {
    pub n_calib: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Three disjoint document lists. The calibration documents come from the
/// non-test pool, the rest of which is `train`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetSplit {
    pub train: Vec<Document>,
    pub calibration: Vec<Document>,
    pub test: Vec<Document>,
    pub seed: u64,
}

/// Shuffles with [`rng::seeded`] (xoshiro256++ seeded through SplitMix64),
/// takes the first `n_test` documents as the test set, the next `n_calib`
/// as the calibration set and the remainder for training.
pub fn split_and_sample(documents: Vec<Document>, config: SplitConfig) -> Result<DatasetSplit> {
    let needed = config.n_calib + config.n_test;
    if needed > documents.len() {
        return Err(Error::InsufficientDocuments {
            needed,
            available: documents.len(),
        });
    }
    let mut docs = documents;
    docs.shuffle(&mut rng::seeded(config.seed));
    let mut rest = docs.split_off(config.n_test);
    let test = docs;
    let train = rest.split_off(config.n_calib);
    Ok(DatasetSplit {
        train,
        calibration: rest,
        test,
        seed: config.seed,
    })
}
