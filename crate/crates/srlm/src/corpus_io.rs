// SPDX-License-Identifier: MIT OR Apache-2.0

//! Corpus loading.
//!
//! A corpus path is a file or a directory (walked recursively, in sorted
//! order). Text files hold blank-line separated records, one document
//! each, tokenized as bytes. `.ids` files hold one document per line as
//! whitespace-separated token ids. Empty files are skipped.

use std::path::{Path, PathBuf};

use srlm_core::corpus::{self, DatasetSplit, Document, SplitConfig, BYTE_VOCAB};

use crate::error::{self, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Prepend the BOS token to byte documents.
    pub bos: bool,
    /// Truncate documents to this many tokens.
    pub max_len: Option<usize>,
    pub vocab_size: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            bos: true,
            max_len: Some(corpus::DEFAULT_MAX_LEN),
            vocab_size: BYTE_VOCAB,
        }
    }
}

fn files(root: &Path) -> Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if meta.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(root, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(files(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn load(root: &Path, options: LoadOptions) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for path in files(root)? {
        let bytes = error::read(&path)?;
        if bytes.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let name = path.display().to_string();
        if path.extension().is_some_and(|e| e == "ids") {
            let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{name}: not UTF-8")))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let ids = corpus::parse_ids(line).map_err(|e| Error::Config(format!("{name}:{}: {e}", i + 1)))?;
                if ids.len() >= 2 {
                    docs.push(Document::new(ids, format!("{name}:{}", i + 1), options.vocab_size)?);
                }
            }
        } else {
            let text = String::from_utf8_lossy(&bytes);
            for (i, record) in corpus::split_records(&text).iter().enumerate() {
                let tokens = corpus::tokenize(record.as_bytes(), options.bos);
                if tokens.len() >= 2 {
                    docs.push(Document::new(tokens, format!("{name}#{i}"), options.vocab_size)?);
                }
            }
        }
    }
    if let Some(n) = options.max_len {
        for d in &mut docs {
            d.truncate(n);
        }
    }
    if docs.is_empty() {
        return Err(Error::Config(format!("no documents found under {}", root.display())));
    }
    Ok(docs)
}

/// Which part of a split a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    All,
    Train,
    Calibration,
    Test,
}

/// Loads `root` and returns one part of its seeded split.
pub fn load_part(root: &Path, options: LoadOptions, split: SplitConfig, part: Part) -> Result<Vec<Document>> {
    let docs = load(root, options)?;
    if part == Part::All {
        return Ok(docs);
    }
    let DatasetSplit {
        train,
        calibration,
        test,
        ..
    } = corpus::split_and_sample(docs, split)?;
    let out = match part {
        Part::Train => train,
        Part::Calibration => calibration,
        Part::Test => test,
        Part::All => unreachable!(),
    };
    if out.is_empty() {
        return Err(Error::Config(format!("the {part:?} split is empty").to_lowercase()));
    }
    Ok(out)
}
