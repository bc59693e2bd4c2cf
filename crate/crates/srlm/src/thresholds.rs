// SPDX-License-Identifier: MIT OR Apache-2.0

//! Threshold files and calibration checkpoints.
//!
//! ```json
//! {"arch": "rwkv",
//!  "sites": [{"block": 0, "position": "TM_R", "lambda": 0.42, "target_percentage": 60}, ...],
//!  "meta": {...}}
//! ```
//!
//! A checkpoint is the same document plus
//! `"progress": {"next_site": n, "history": [...]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use srlm_core::calibrator::{CalibProgress, SiteRecord};
use srlm_core::threshold::Arch;
use srlm_core::{Position, SiteId, ThresholdAssignment, ThresholdSite};

use crate::error::{self, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEntry {
    pub block: usize,
    pub position: Position,
    pub lambda: f32,
    pub target_percentage: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub next_site: usize,
    pub history: Vec<SiteRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub arch: Arch,
    pub sites: Vec<SiteEntry>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<Progress>,
}

impl ThresholdFile {
    /// Lists every site of `sites`; those absent from `assignment` get λ = 0.
    pub fn new(arch: Arch, sites: &[ThresholdSite], assignment: &ThresholdAssignment) -> Self {
        Self {
            arch,
            sites: sites
                .iter()
                .map(|s| {
                    let t = assignment.get(s.id);
                    SiteEntry {
                        block: s.id.block,
                        position: s.id.position,
                        lambda: t.map_or(0.0, |t| t.lambda),
                        target_percentage: t.and_then(|t| t.target_percentage),
                    }
                })
                .collect(),
            meta: Default::default(),
            progress: None,
        }
    }

    pub fn checkpoint(arch: Arch, sites: &[ThresholdSite], progress: &CalibProgress) -> Result<Self> {
        let mut file = Self::new(arch, sites, &progress.assignment()?);
        file.progress = Some(Progress {
            next_site: progress.next_site(),
            history: progress.history.clone(),
        });
        Ok(file)
    }

    pub fn assignment(&self) -> srlm_core::Result<ThresholdAssignment> {
        let mut a = ThresholdAssignment::new();
        for s in &self.sites {
            if s.position.arch() != self.arch {
                return Err(srlm_core::Error::UnknownSite(format!(
                    "{} in a {} thresholds file",
                    s.position, self.arch
                )));
            }
            a.set(SiteId::new(s.block, s.position), s.lambda, s.target_percentage)?;
        }
        Ok(a)
    }

    /// Assignment checked against a model's sites.
    pub fn assignment_for(&self, arch: Arch, sites: &[ThresholdSite]) -> Result<ThresholdAssignment> {
        if self.arch != arch {
            return Err(Error::Config(format!(
                "thresholds are for {}, model is {arch}",
                self.arch
            )));
        }
        let a = self.assignment()?;
        a.validate(sites)?;
        Ok(a)
    }

    /// Checkpoint progress, verified against the model's sites.
    pub fn progress_for(&self, path: &Path, arch: Arch, sites: &[ThresholdSite]) -> Result<CalibProgress> {
        let corrupt = |m: String| Error::corrupt(path, m);
        let p = self.progress.as_ref().ok_or_else(|| corrupt("no progress section".into()))?;
        if self.arch != arch {
            return Err(corrupt(format!("checkpoint is for {}, model is {arch}", self.arch)));
        }
        if p.next_site != p.history.len() {
            return Err(corrupt(format!(
                "next_site {} but {} completed sites",
                p.next_site,
                p.history.len()
            )));
        }
        let progress = CalibProgress {
            history: p.history.clone(),
        };
        progress.check_against(sites).map_err(|e| corrupt(e.to_string()))?;
        let rebuilt = progress.assignment().map_err(|e| corrupt(e.to_string()))?;
        let listed = self.assignment().map_err(|e| corrupt(e.to_string()))?;
        if rebuilt.iter().any(|(id, t)| listed.lambda(id) != t.lambda) {
            return Err(corrupt("sites disagree with progress history".into()));
        }
        Ok(progress)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = error::read_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("thresholds serialize");
        text.push('\n');
        error::write(path, text)
    }
}
