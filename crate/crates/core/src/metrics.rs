// SPDX-License-Identifier: MIT OR Apache-2.0

//! Empirical activation sparsity and loss on a dataset.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::backend::{document_nll, try_map, Executor, SparseLm};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::numerics::count_zeros;
use crate::threshold::{Position, SiteId, ThresholdAssignment};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SiteSparsity {
    pub site: SiteId,
    pub input_dim: usize,
    /// Elements consumed per token by the layers behind this input.
    pub weight: usize,
    pub thresholded: bool,
    pub lambda: f32,
    pub tokens: u64,
    pub zeros: u64,
    /// `zeros / (tokens × input_dim)`
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SparsityReport {
    pub sites: Vec<SiteSparsity>,
    /// `Σ sparsity·weight / Σ weight` over all measured sites.
    pub weighted_average_sparsity: f64,
    pub documents: usize,
    pub scored_tokens: usize,
    pub loss: f64,
    pub baseline_loss: Option<f64>,
    pub loss_increase_percent: Option<f64>,
}

impl SparsityReport {
    /// Weighted sparsity of `position` averaged over blocks.
    pub fn position_sparsity(&self, position: Position) -> Option<f64> {
        let (num, den) = self
            .sites
            .iter()
            .filter(|s| s.site.position == position)
            .fold((0.0, 0.0), |(n, d), s| {
                (n + s.sparsity * s.weight as f64, d + s.weight as f64)
            });
        (den > 0.0).then(|| num / den)
    }

    pub fn site(&self, site: SiteId) -> Option<&SiteSparsity> {
        self.sites.iter().find(|s| s.site == site)
    }
}

/// `100 · (sparse − baseline) / baseline`
pub fn loss_increase(baseline: f64, sparse: f64) -> Result<f64> {
    if !(baseline > 0.0) || !baseline.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "baseline loss must be positive, got {baseline}"
        )));
    }
    Ok(100.0 * (sparse - baseline) / baseline)
}

/// Element-weighted average of per-site sparsities.
pub fn weighted_average(sites: &[(f64, usize)]) -> Result<f64> {
    let den: usize = sites.iter().map(|&(_, w)| w).sum();
    if den == 0 {
        return Err(Error::Empty("weighted sparsity"));
    }
    Ok(sites.iter().map(|&(s, w)| s * w as f64).sum::<f64>() / den as f64)
}

/// One pass over `dataset` measuring every tapped site and the loss.
pub fn measure<M, E>(
    model: &M,
    assignment: &ThresholdAssignment,
    dataset: &[Document],
    baseline_loss: Option<f64>,
    exec: &E,
) -> Result<SparsityReport>
where
    M: SparseLm + ?Sized,
    E: Executor + ?Sized,
{
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    assignment.validate(&model.threshold_sites())?;
    let measured = model.measured_sites();
    let index: BTreeMap<SiteId, usize> =
        measured.iter().enumerate().map(|(i, s)| (s.id, i)).collect();

    let parts = try_map(exec, dataset.len(), &|i| {
        let mut zeros = vec![0u64; measured.len()];
        let mut taps = vec![0u64; measured.len()];
        let mut sink = |site: SiteId, x: &[f32]| {
            if let Some(&j) = index.get(&site) {
                zeros[j] += count_zeros(x) as u64;
                taps[j] += 1;
            }
        };
        let nll = document_nll(model, dataset[i].tokens(), assignment, &mut sink)?;
        Ok((nll, zeros, taps))
    })?;

    let mut zeros = vec![0u64; measured.len()];
    let mut tokens = vec![0u64; measured.len()];
    let (mut sum, mut count) = (0.0f64, 0usize);
    for ((ds, dc), z, t) in parts {
        sum += ds;
        count += dc;
        for j in 0..measured.len() {
            zeros[j] += z[j];
            tokens[j] += t[j];
        }
    }

    let sites: Vec<SiteSparsity> = measured
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let elements = tokens[j] * m.input_dim as u64;
            SiteSparsity {
                site: m.id,
                input_dim: m.input_dim,
                weight: m.weight,
                thresholded: m.thresholded,
                lambda: assignment.lambda(m.id),
                tokens: tokens[j],
                zeros: zeros[j],
                sparsity: if elements == 0 {
                    0.0
                } else {
                    zeros[j] as f64 / elements as f64
                },
            }
        })
        .collect();
    let pairs: Vec<(f64, usize)> = sites.iter().map(|s| (s.sparsity, s.weight)).collect();
    let loss = sum / count as f64;
    Ok(SparsityReport {
        weighted_average_sparsity: weighted_average(&pairs)?,
        sites,
        documents: dataset.len(),
        scored_tokens: count,
        loss,
        baseline_loss,
        loss_increase_percent: baseline_loss.map(|b| loss_increase(b, loss)).transpose()?,
    })
}
