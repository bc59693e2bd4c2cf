// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{self, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Written next to the primary output of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// SHA-256 of a file, or of every file below a directory (relative path
/// and contents, in sorted order).
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        h.update(error::read(path)?);
    } else {
        let mut stack = vec![path.to_path_buf()];
        let mut files: Vec<PathBuf> = Vec::new();
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let p = entry.map_err(|e| Error::io(&dir, e))?.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push(p);
                }
            }
        }
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(error::read(&f)?);
        }
    }
    Ok(format!("{:x}", h.finalize()))
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: Vec<InputHash>,
    started_at: String,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            config,
            inputs: Vec::new(),
            started_at: now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: hash_path(path)?,
        });
        Ok(())
    }

    pub fn finish(self, outputs: &[&Path]) -> RunManifest {
        RunManifest {
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: self.started_at,
            finished_at: now(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }
}

/// `<output>.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        error::write(path, serde_json::to_string_pretty(self).expect("manifest serializes") + "\n")
    }
}
