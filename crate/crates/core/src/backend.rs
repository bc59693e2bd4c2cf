// SPDX-License-Identifier: MIT OR Apache-2.0

//! The surface the calibrator and metrics need from a model, plus the
//! document-level scheduling abstraction.

use alloc::vec::Vec;

use crate::error::Result;
use crate::numerics::{softmax_cross_entropy, Vector};
use crate::threshold::{Arch, MeasuredSite, SiteId, ThresholdAssignment, ThresholdSite};

/// Receives every tapped linear-layer input, after thresholding.
pub trait TapSink {
    fn tap(&mut self, site: SiteId, input: &[f32]);
}

/// Discards taps.
pub struct NoTaps;

impl TapSink for NoTaps {
    #[inline]
    fn tap(&mut self, _: SiteId, _: &[f32]) {}
}

impl<F: FnMut(SiteId, &[f32])> TapSink for F {
    fn tap(&mut self, site: SiteId, input: &[f32]) {
        self(site, input)
    }
}

/// A token-by-token language model with threshold sites before its linear
/// layers.
///
/// Implementations are immutable; all per-sequence data lives in `State`,
/// so one model can be evaluated on many documents concurrently.
pub trait SparseLm: Sync {
    type State: Send;

    fn arch(&self) -> Arch;
    fn vocab_size(&self) -> usize;
    fn n_blocks(&self) -> usize;

    /// Longest sequence a fresh state can process, if bounded.
    fn max_sequence_len(&self) -> Option<usize> {
        None
    }

    /// Thresholded sites in calibration order.
    fn threshold_sites(&self) -> Vec<ThresholdSite>;

    /// Every tapped site (thresholded and naturally sparse), in block order.
    fn measured_sites(&self) -> Vec<MeasuredSite>;

    fn fresh_state(&self) -> Self::State;

    /// Advances the model by one token and returns the next-token logits.
    fn step(
        &self,
        state: &mut Self::State,
        token: u32,
        thresholds: &ThresholdAssignment,
        taps: &mut dyn TapSink,
    ) -> Result<Vector>;
}

/// Thresholded sites of a model in calibration order.
pub fn enumerate_sites<M: SparseLm + ?Sized>(model: &M) -> Vec<ThresholdSite> {
    model.threshold_sites()
}

/// Runs one document from a fresh state.
///
/// Every token is stepped (so taps see all of them); the logits of token
/// `t` are scored against token `t + 1`. Returns the summed NLL and the
/// number of scored positions.
pub fn document_nll<M: SparseLm + ?Sized>(
    model: &M,
    tokens: &[u32],
    thresholds: &ThresholdAssignment,
    taps: &mut dyn TapSink,
) -> Result<(f64, usize)> {
    if tokens.len() < 2 {
        return Err(crate::Error::Empty("document needs at least two tokens"));
    }
    let mut state = model.fresh_state();
    let mut sum = 0.0f64;
    for (t, &token) in tokens.iter().enumerate() {
        let logits = model.step(&mut state, token, thresholds, taps)?;
        if let Some(&next) = tokens.get(t + 1) {
            sum += softmax_cross_entropy(&logits, next)?;
        }
    }
    Ok((sum, tokens.len() - 1))
}

/// Schedules independent work items. Results come back in index order.
pub trait Executor: Sync {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;

    fn threads(&self) -> usize {
        1
    }
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

/// [`Executor::map`] over fallible work; the lowest-index error wins.
pub fn try_map<E, T>(exec: &E, n: usize, f: &(dyn Fn(usize) -> Result<T> + Sync)) -> Result<Vec<T>>
where
    E: Executor + ?Sized,
    T: Send,
{
    exec.map(n, f).into_iter().collect()
}
