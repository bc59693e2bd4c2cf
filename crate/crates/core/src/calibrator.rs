// SPDX-License-Identifier: MIT OR Apache-2.0

//! Training-free threshold calibration.
//!
//! Sites are visited in calibration order (block, then dataflow position).
//! For each site:
//!
//! ```text
//!   run calibration set with current assignment ──► base loss, |x| sample
//!   sample ──percentiles──► λ ladder (one λ per target percentage)
//!   search ladder: accept while loss(λ) / base < loss_inc
//!   keep best accepted λ (or λ = 0 if none) and move on
//! ```
//!
//! Outside block 0 the search can warm-start at the percentage chosen most
//! often at the same position in earlier blocks.

use alloc::format;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::Rng;

use crate::backend::{document_nll, try_map, Executor, NoTaps, SparseLm};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::rng;
use crate::threshold::{Position, SiteId, ThresholdAssignment, ThresholdSite};

/// Sample cap per site for the magnitude recording.
pub const DEFAULT_MAX_SAMPLE: usize = 1 << 22;
pub const DEFAULT_LOSS_INC: f64 = 1.0005;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibConfig {
    /// Target sparsity percentages, strictly ascending, each in `1..=99`.
    pub percentages: Vec<u8>,
    pub loss_inc: f64,
    /// Uses only the first `n` calibration documents when set.
    pub n_calib: Option<usize>,
    pub seed: u64,
    pub heuristic: bool,
    pub max_sample: usize,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            percentages: (1..=9).map(|i| i * 10).collect(),
            loss_inc: DEFAULT_LOSS_INC,
            n_calib: None,
            seed: 0,
            heuristic: true,
            max_sample: DEFAULT_MAX_SAMPLE,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if self.percentages.is_empty() {
            return Err(Error::InvalidConfig("no sparsity percentages".into()));
        }
        if self.percentages.iter().any(|&p| p == 0 || p >= 100) {
            return Err(Error::InvalidConfig(format!(
                "percentages must lie in (0, 100): {:?}",
                self.percentages
            )));
        }
        if self.percentages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "percentages must be strictly ascending: {:?}",
                self.percentages
            )));
        }
        if !(self.loss_inc.is_finite() && self.loss_inc > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "loss_inc must be a finite value above 1, got {}",
                self.loss_inc
            )));
        }
        if self.max_sample == 0 {
            return Err(Error::InvalidConfig("max_sample must be positive".into()));
        }
        if self.n_calib == Some(0) {
            return Err(Error::InvalidConfig("n_calib must be positive".into()));
        }
        Ok(())
    }
}

/// Sorted sample of activation magnitudes recorded at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSample {
    sorted: Vec<f32>,
    observed: u64,
}

impl MagnitudeSample {
    pub fn from_values(mut values: Vec<f32>, observed: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("magnitude sample"));
        }
        for v in values.iter_mut() {
            if !v.is_finite() {
                return Err(Error::NonFinite("magnitude sample"));
            }
            *v = v.abs();
        }
        values.sort_unstable_by(f32::total_cmp);
        Ok(Self {
            sorted: values,
            observed,
        })
    }

    /// Ascending magnitudes.
    pub fn sorted(&self) -> &[f32] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Elements seen before subsampling.
    pub fn observed(&self) -> u64 {
        self.observed
    }

    /// Nearest-rank threshold: with `k = ⌈p·n/100⌉`, the smallest λ for
    /// which at least `k` sample elements fall strictly below λ.
    ///
    /// When the rank lands inside a run of equal values the whole run is
    /// zeroed (overshoot). A sample of one repeated value yields that value.
    pub fn lambda(&self, percentage: f64) -> Result<f32> {
        if !(percentage > 0.0 && percentage < 100.0) {
            return Err(Error::InvalidConfig(format!(
                "percentile {percentage} outside (0, 100)"
            )));
        }
        let s = &self.sorted;
        let n = s.len();
        if s[0] == s[n - 1] {
            return Ok(s[0]);
        }
        let k = (crate::math::ceil(percentage / 100.0 * n as f64) as usize).clamp(1, n);
        if k < n && s[k] > s[k - 1] {
            Ok(s[k])
        } else {
            Ok(s[k - 1].next_up())
        }
    }

    /// Fraction of the sample strictly below `lambda`.
    pub fn sparsity_at(&self, lambda: f32) -> f64 {
        self.sorted.partition_point(|&v| v < lambda) as f64 / self.sorted.len() as f64
    }
}

/// λ achieving `percentage` percent zeros on `sample` (see
/// [`MagnitudeSample::lambda`]).
pub fn lambda_for_percentile(sample: &[f32], percentage: f64) -> Result<f32> {
    MagnitudeSample::from_values(sample.to_vec(), sample.len() as u64)?.lambda(percentage)
}

/// Seeded reservoir (algorithm R) of at most `cap` values.
#[derive(Debug, Clone)]
struct Reservoir {
    values: Vec<f32>,
    seen: u64,
    cap: usize,
    rng: rng::SeededRng,
}

impl Reservoir {
    fn new(cap: usize, rng: rng::SeededRng) -> Self {
        Self {
            values: Vec::new(),
            seen: 0,
            cap,
            rng,
        }
    }

    fn extend(&mut self, xs: &[f32]) {
        for &x in xs {
            if self.values.len() < self.cap {
                self.values.push(x);
            } else {
                let j = self.rng.random_range(0..=self.seen);
                if (j as usize) < self.cap {
                    self.values[j as usize] = x;
                }
            }
            self.seen += 1;
        }
    }
}

fn documents<'a>(dataset: &'a [Document], config: &CalibConfig) -> Result<&'a [Document]> {
    if dataset.is_empty() {
        return Err(Error::Empty("calibration dataset"));
    }
    Ok(&dataset[..config.n_calib.map_or(dataset.len(), |n| n.min(dataset.len()))])
}

/// Token-weighted mean NLL: summed NLL over all scored positions divided by
/// their count. Per-document sums are reduced in document order.
pub fn dataset_loss<M, E>(
    model: &M,
    assignment: &ThresholdAssignment,
    dataset: &[Document],
    exec: &E,
) -> Result<f64>
where
    M: SparseLm + ?Sized,
    E: Executor + ?Sized,
{
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let parts = try_map(exec, dataset.len(), &|i| {
        document_nll(model, dataset[i].tokens(), assignment, &mut NoTaps)
    })?;
    let (sum, count) = parts
        .into_iter()
        .fold((0.0, 0usize), |(s, c), (ds, dc)| (s + ds, c + dc));
    Ok(sum / count as f64)
}

/// Pooled |x| sample at `site` (every element of every token's tap) from a
/// pass with `assignment` active, plus that pass's dataset loss.
pub fn record_magnitudes_with_loss<M, E>(
    model: &M,
    assignment: &ThresholdAssignment,
    dataset: &[Document],
    site: SiteId,
    max_sample: usize,
    rng: rng::SeededRng,
    exec: &E,
) -> Result<(MagnitudeSample, f64)>
where
    M: SparseLm + ?Sized,
    E: Executor + ?Sized,
{
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut reservoir = Reservoir::new(max_sample.max(1), rng);
    let (mut sum, mut count) = (0.0f64, 0usize);
    // Chunking bounds how many documents' taps are held at once.
    let chunk = exec.threads().max(1) * 4;
    for start in (0..dataset.len()).step_by(chunk) {
        let end = (start + chunk).min(dataset.len());
        let parts = try_map(exec, end - start, &|i| {
            let mut values = Vec::new();
            let mut sink = |s: SiteId, x: &[f32]| {
                if s == site {
                    values.extend(x.iter().map(|v| v.abs()));
                }
            };
            let nll = document_nll(model, dataset[start + i].tokens(), assignment, &mut sink)?;
            Ok((nll, values))
        })?;
        for ((ds, dc), values) in parts {
            sum += ds;
            count += dc;
            reservoir.extend(&values);
        }
    }
    if reservoir.seen == 0 {
        return Err(Error::UnknownSite(format!("{site} was never tapped")));
    }
    let sample = MagnitudeSample::from_values(reservoir.values, reservoir.seen)?;
    Ok((sample, sum / count as f64))
}

/// [`record_magnitudes_with_loss`] without the loss.
pub fn record_magnitudes<M, E>(
    model: &M,
    assignment: &ThresholdAssignment,
    dataset: &[Document],
    site: SiteId,
    max_sample: usize,
    seed: u64,
    exec: &E,
) -> Result<MagnitudeSample>
where
    M: SparseLm + ?Sized,
    E: Executor + ?Sized,
{
    record_magnitudes_with_loss(
        model,
        assignment,
        dataset,
        site,
        max_sample,
        rng::seeded(seed),
        exec,
    )
    .map(|(s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Candidate {
    pub percentage: u8,
    pub lambda: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trial {
    pub index: usize,
    pub percentage: u8,
    pub lambda: f32,
    pub loss: f64,
    pub ratio: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchOutcome {
    /// Index into the ladder of the accepted candidate, `None` if rejected.
    pub chosen: Option<usize>,
    pub trace: Vec<Trial>,
}

impl SearchOutcome {
    pub fn chosen_trial(&self) -> Option<&Trial> {
        let c = self.chosen?;
        self.trace.iter().find(|t| t.index == c)
    }
}

/// Searches a candidate ladder given a loss oracle.
///
/// Without `start`, candidates are tried in ascending order until the first
/// failure. With `start`, that candidate is tried first; on success the
/// search continues upward until a failure, otherwise strictly downward
/// until a success. A candidate passes when `loss / base_loss < loss_inc`.
/// Each candidate is evaluated at most once.
pub fn search_ladder(
    ladder: &[Candidate],
    start: Option<usize>,
    base_loss: f64,
    loss_inc: f64,
    loss_of: &mut dyn FnMut(f32) -> Result<f64>,
) -> Result<SearchOutcome> {
    if !(base_loss.is_finite() && base_loss > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "base loss must be positive and finite, got {base_loss}"
        )));
    }
    if let Some(s) = start {
        if s >= ladder.len() {
            return Err(Error::InvalidConfig(format!(
                "start index {s} outside ladder of {}",
                ladder.len()
            )));
        }
    }
    let mut trace = Vec::new();
    let mut trial = |index: usize, trace: &mut Vec<Trial>| -> Result<bool> {
        let c = ladder[index];
        let loss = loss_of(c.lambda)?;
        let ratio = loss / base_loss;
        let accepted = ratio < loss_inc;
        trace.push(Trial {
            index,
            percentage: c.percentage,
            lambda: c.lambda,
            loss,
            ratio,
            accepted,
        });
        Ok(accepted)
    };
    let mut chosen = None;
    let (first, upward) = match start {
        None => (0, true),
        Some(s) => (s, trial(s, &mut trace)?),
    };
    if upward {
        let from = if start.is_some() {
            chosen = Some(first);
            first + 1
        } else {
            first
        };
        for i in from..ladder.len() {
            if !trial(i, &mut trace)? {
                break;
            }
            chosen = Some(i);
        }
    } else {
        for i in (0..first).rev() {
            if trial(i, &mut trace)? {
                chosen = Some(i);
                break;
            }
        }
    }
    Ok(SearchOutcome { chosen, trace })
}

/// Builds the λ ladder for `percentages` from `sample`.
pub fn ladder(sample: &MagnitudeSample, percentages: &[u8]) -> Result<Vec<Candidate>> {
    percentages
        .iter()
        .map(|&p| {
            Ok(Candidate {
                percentage: p,
                lambda: sample.lambda(f64::from(p))?,
            })
        })
        .collect()
}

/// Searches one site on a model: each candidate is scored by the dataset
/// loss with the candidate's λ set at `site` on top of `assignment`.
#[allow(clippy::too_many_arguments)]
pub fn search_site<M, E>(
    model: &M,
    assignment: &ThresholdAssignment,
    dataset: &[Document],
    site: SiteId,
    ladder: &[Candidate],
    start: Option<usize>,
    base_loss: f64,
    loss_inc: f64,
    exec: &E,
) -> Result<SearchOutcome>
where
    M: SparseLm + ?Sized,
    E: Executor + ?Sized,
{
    search_ladder(ladder, start, base_loss, loss_inc, &mut |lambda| {
        let trial = assignment.with(site, lambda, None)?;
        dataset_loss(model, &trial, dataset, exec)
    })
}

/// Warm-start index: the most frequent percentage among `history` (ties go
/// to the lower percentage), located in `percentages`. A most-frequent
/// value of 0 (rejection) or one not on the ladder maps to index 0.
pub fn warm_start(history: &[u8], percentages: &[u8]) -> Option<usize> {
    if history.is_empty() {
        return None;
    }
    let mut best = (0usize, 0u8);
    let mut values: Vec<u8> = history.to_vec();
    values.sort_unstable();
    for group in values.chunk_by(|a, b| a == b) {
        if group.len() > best.0 {
            best = (group.len(), group[0]);
        }
    }
    Some(percentages.iter().position(|&p| p == best.1).unwrap_or(0))
}

/// Outcome of one site's calibration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SiteRecord {
    pub site: SiteId,
    pub input_dim: usize,
    /// Accepted percentage; 0 means every tried candidate was rejected.
    pub chosen_percentage: u8,
    pub lambda: f32,
    pub base_loss: f64,
    pub accepted_loss: Option<f64>,
    pub start_index: Option<usize>,
    pub candidates_evaluated: usize,
    pub sample_size: usize,
    pub sample_observed: u64,
    pub trace: Vec<Trial>,
}

impl SiteRecord {
    pub fn accepted(&self) -> bool {
        self.chosen_percentage != 0
    }

    /// Loss of the assignment after this site.
    pub fn loss_after(&self) -> f64 {
        self.accepted_loss.unwrap_or(self.base_loss)
    }

    /// Evaluations a plain ascending search would need for the same
    /// outcome, assuming loss grows with sparsity.
    pub fn ascending_evaluations(&self, ladder_len: usize) -> usize {
        match self.trace.iter().find(|t| t.accepted && t.percentage == self.chosen_percentage) {
            Some(t) => (t.index + 2).min(ladder_len),
            None => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationReport {
    pub config: CalibConfig,
    pub sites: Vec<SiteRecord>,
    /// Calibration-set loss with no thresholds.
    pub loss_before: f64,
    /// Calibration-set loss with the final assignment.
    pub loss_after: f64,
    /// Candidate loss evaluations performed (excludes base-loss passes).
    pub candidate_evaluations: usize,
    pub base_loss_evaluations: usize,
    /// Candidate evaluations an ascending search would have needed.
    pub ascending_projection: usize,
    /// `k_num × sites`.
    pub worst_case_evaluations: usize,
}

impl CalibrationReport {
    /// Checks that every accepted site met the loss criterion and no site
    /// exceeded the candidate budget.
    pub fn verify(&self) -> Result<()> {
        let k = self.config.percentages.len();
        for s in &self.sites {
            if s.candidates_evaluated > k {
                return Err(Error::InvalidConfig(format!(
                    "{} evaluated {} candidates",
                    s.site, s.candidates_evaluated
                )));
            }
            if let Some(l) = s.accepted_loss {
                if !(l / s.base_loss < self.config.loss_inc) {
                    return Err(Error::InvalidConfig(format!(
                        "{} accepted with ratio {}",
                        s.site,
                        l / s.base_loss
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Completed sites so far; the assignment is rebuilt from them on resume.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibProgress {
    pub history: Vec<SiteRecord>,
}

impl CalibProgress {
    pub fn next_site(&self) -> usize {
        self.history.len()
    }

    pub fn assignment(&self) -> Result<ThresholdAssignment> {
        let mut a = ThresholdAssignment::new();
        for r in self.history.iter().filter(|r| r.accepted()) {
            a.set(r.site, r.lambda, Some(r.chosen_percentage))?;
        }
        Ok(a)
    }

    fn position_history(&self, position: Position) -> Vec<u8> {
        self.history
            .iter()
            .filter(|r| r.site.position == position)
            .map(|r| r.chosen_percentage)
            .collect()
    }

    /// Fails unless the history is a prefix of `sites`.
    pub fn check_against(&self, sites: &[ThresholdSite]) -> Result<()> {
        if self.history.len() > sites.len() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint has {} sites, model has {}",
                self.history.len(),
                sites.len()
            )));
        }
        for (r, s) in self.history.iter().zip(sites) {
            if r.site != s.id {
                return Err(Error::UnknownSite(format!(
                    "checkpoint site {} where {} was expected",
                    r.site, s.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibOutcome {
    Complete(ThresholdAssignment, CalibrationReport),
    Stopped(CalibProgress),
}

/// Runs the full calibration.
pub fn calibrate<M, E>(
    model: &M,
    dataset: &[Document],
    config: &CalibConfig,
    exec: &E,
) -> Result<(ThresholdAssignment, CalibrationReport)>
where
    M: SparseLm + ?Sized,
    E: Executor + ?Sized,
{
    match calibrate_resumable(model, dataset, config, exec, CalibProgress::default(), &mut |_| {
        ControlFlow::Continue(())
    })? {
        CalibOutcome::Complete(a, r) => Ok((a, r)),
        CalibOutcome::Stopped(_) => unreachable!("callback never stops"),
    }
}

/// Calibration starting from `progress`. `on_site` sees the progress after
/// every completed site and may stop the run.
pub fn calibrate_resumable<M, E>(
    model: &M,
    dataset: &[Document],
    config: &CalibConfig,
    exec: &E,
    mut progress: CalibProgress,
    on_site: &mut dyn FnMut(&CalibProgress) -> ControlFlow<()>,
) -> Result<CalibOutcome>
where
    M: SparseLm + ?Sized,
    E: Executor + ?Sized,
{
    config.validate()?;
    let docs = documents(dataset, config)?;
    let sites = model.threshold_sites();
    progress.check_against(&sites)?;
    let mut assignment = progress.assignment()?;

    for (index, site) in sites.iter().enumerate().skip(progress.next_site()) {
        let (sample, base_loss) = record_magnitudes_with_loss(
            model,
            &assignment,
            docs,
            site.id,
            config.max_sample,
            rng::derive(config.seed, index as u64),
            exec,
        )?;
        let candidates = ladder(&sample, &config.percentages)?;
        let start = if config.heuristic && site.id.block > 0 {
            warm_start(&progress.position_history(site.id.position), &config.percentages)
        } else {
            None
        };
        let outcome = search_site(
            model,
            &assignment,
            docs,
            site.id,
            &candidates,
            start,
            base_loss,
            config.loss_inc,
            exec,
        )?;
        let chosen = outcome.chosen_trial().copied();
        if let Some(t) = chosen {
            assignment.set(site.id, t.lambda, Some(t.percentage))?;
        }
        progress.history.push(SiteRecord {
            site: site.id,
            input_dim: site.input_dim,
            chosen_percentage: chosen.map_or(0, |t| t.percentage),
            lambda: chosen.map_or(0.0, |t| t.lambda),
            base_loss,
            accepted_loss: chosen.map(|t| t.loss),
            start_index: start,
            candidates_evaluated: outcome.trace.len(),
            sample_size: sample.len(),
            sample_observed: sample.observed(),
            trace: outcome.trace,
        });
        if on_site(&progress).is_break() && progress.next_site() < sites.len() {
            return Ok(CalibOutcome::Stopped(progress));
        }
    }

    let k = config.percentages.len();
    let sites_done = &progress.history;
    let report = CalibrationReport {
        config: config.clone(),
        loss_before: match sites_done.first() {
            Some(r) => r.base_loss,
            None => dataset_loss(model, &ThresholdAssignment::new(), docs, exec)?,
        },
        loss_after: match sites_done.last() {
            Some(r) => r.loss_after(),
            None => dataset_loss(model, &assignment, docs, exec)?,
        },
        candidate_evaluations: sites_done.iter().map(|r| r.candidates_evaluated).sum(),
        base_loss_evaluations: sites_done.len(),
        ascending_projection: sites_done.iter().map(|r| r.ascending_evaluations(k)).sum(),
        worst_case_evaluations: k * sites_done.len(),
        sites: progress.history,
    };
    Ok(CalibOutcome::Complete(assignment, report))
}
