// SPDX-License-Identifier: MIT OR Apache-2.0

// A synthetic model for calibrator tests. Every threshold site sees a
// deterministic pseudo-random input; the magnitude it zeroes lowers the
// logit of the correct next token, so loss grows with λ.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::sync::Mutex;

use srlm_core::backend::{document_nll, TapSink};
use srlm_core::corpus::Document;
use srlm_core::threshold::{Arch, MeasuredSite};
use srlm_core::{Executor, Position, Result, SiteId, SparseLm, ThresholdAssignment, ThresholdSite, Vector};

pub const POSITIONS: [Position; 6] = [
    Position::TmR,
    Position::TmK,
    Position::TmV,
    Position::TmOut,
    Position::CmR,
    Position::CmK,
];

pub struct StubModel {
    pub n_blocks: usize,
    pub dim: usize,
    pub vocab: usize,
    /// Loss sensitivity per threshold site, in calibration order.
    pub sensitivity: Vec<f32>,
    /// Adds a ripple so loss is not monotone in λ.
    pub ripple: bool,
}

impl StubModel {
    pub fn new(n_blocks: usize, seed: u64) -> Self {
        let n = n_blocks * POSITIONS.len();
        Self {
            n_blocks,
            dim: 16,
            vocab: 16,
            sensitivity: (0..n).map(|i| 0.05 + 0.6 * unit(mix(seed, i as u64, 99)) as f32).collect(),
            ripple: false,
        }
    }

    pub fn input(&self, token: u32, site: usize) -> Vec<f32> {
        (0..self.dim)
            .map(|j| 2.0 * unit(mix(token as u64, site as u64, j as u64)) as f32 - 1.0)
            .collect()
    }
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(c.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(z: u64) -> f64 {
    (z >> 11) as f64 / (1u64 << 53) as f64
}

impl SparseLm for StubModel {
    type State = ();

    fn arch(&self) -> Arch {
        Arch::Rwkv
    }
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn n_blocks(&self) -> usize {
        self.n_blocks
    }
    fn threshold_sites(&self) -> Vec<ThresholdSite> {
        (0..self.n_blocks)
            .flat_map(|b| POSITIONS.iter().map(move |&p| ThresholdSite { id: SiteId::new(b, p), input_dim: 16 }))
            .collect()
    }
    fn measured_sites(&self) -> Vec<MeasuredSite> {
        (0..self.n_blocks)
            .flat_map(|b| {
                POSITIONS
                    .iter()
                    .map(move |&p| MeasuredSite { id: SiteId::new(b, p), input_dim: 16, weight: 16, thresholded: true })
                    .chain([MeasuredSite { id: SiteId::new(b, Position::CmV), input_dim: 64, weight: 64, thresholded: false }])
            })
            .collect()
    }
    fn fresh_state(&self) {}

    fn step(&self, _: &mut (), token: u32, thresholds: &ThresholdAssignment, taps: &mut dyn TapSink) -> Result<Vector> {
        let mut damage = 0.0f32;
        for (i, site) in self.threshold_sites().iter().enumerate() {
            let mut x = self.input(token, i);
            let lambda = thresholds.lambda(site.id);
            let mut removed = 0.0f32;
            for v in x.iter_mut() {
                if v.abs() < lambda {
                    removed += v.abs();
                    *v = 0.0;
                }
            }
            taps.tap(site.id, &x);
            let mut d = removed / self.dim as f32;
            if self.ripple {
                d += 0.08 * (d * 40.0).sin().abs();
            }
            damage += self.sensitivity[i] * d;
            if site.id.position == Position::CmK {
                let hidden: Vec<f32> = (0..64).map(|j| if j % 2 == 0 { 0.0 } else { 1.0 }).collect();
                taps.tap(SiteId::new(site.id.block, Position::CmV), &hidden);
            }
        }
        let mut logits = vec![0.0f32; self.vocab];
        logits[(token as usize + 1) % self.vocab] = 2.0 - damage;
        Vector::new(logits)
    }
}

pub fn documents(n: usize, len: usize, seed: u64) -> Vec<Document> {
    (0..n)
        .map(|i| {
            let start = mix(seed, i as u64, 0) % 16;
            let tokens: Vec<u32> = (0..len as u64).map(|t| ((start + t) % 16) as u32).collect();
            Document::new(tokens, format!("stub{i}"), 16).unwrap()
        })
        .collect()
}

/// Token-weighted mean NLL computed directly from `document_nll`.
pub fn oracle_loss<M: SparseLm>(model: &M, assignment: &ThresholdAssignment, docs: &[Document]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for d in docs {
        let (s, c) = document_nll(model, d.tokens(), assignment, &mut srlm_core::backend::NoTaps).unwrap();
        sum += s;
        n += c;
    }
    sum / n as f64
}

/// Every magnitude tapped at `site`.
pub fn oracle_magnitudes<M: SparseLm>(model: &M, assignment: &ThresholdAssignment, docs: &[Document], site: SiteId) -> Vec<f32> {
    let mut out = Vec::new();
    for d in docs {
        let mut sink = |s: SiteId, x: &[f32]| {
            if s == site {
                out.extend(x.iter().map(|v| v.abs()));
            }
        };
        document_nll(model, d.tokens(), assignment, &mut sink).unwrap();
    }
    out
}

/// Smallest sample value (or, failing that, just above the maximum) that
/// zeroes at least ⌈p·n/100⌉ elements. Any λ zeroing the same elements is
/// equivalent on the sample.
pub fn oracle_lambda(mags: &[f32], p: u8) -> f32 {
    let mut s = mags.to_vec();
    s.sort_by(f32::total_cmp);
    let n = s.len();
    let need = ((p as f64 * n as f64 / 100.0).ceil() as usize).clamp(1, n);
    if s[0] == s[n - 1] {
        return s[0];
    }
    let mut candidates: Vec<f32> = s.clone();
    candidates.push(s[n - 1].next_up());
    candidates.dedup();
    *candidates
        .iter()
        .find(|&&c| s.iter().filter(|&&v| v < c).count() >= need)
        .unwrap()
}

pub fn oracle_mode(history: &[u8]) -> Option<u8> {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for &h in history {
        *counts.entry(h).or_default() += 1;
    }
    let max = *counts.values().max()?;
    counts.into_iter().find(|(_, c)| *c == max).map(|(v, _)| v)
}

/// Applies the search rule to a precomputed table of pass flags. Returns
/// the chosen index and the order of evaluated indices.
pub fn oracle_search(pass: &[bool], start: Option<usize>) -> (Option<usize>, Vec<usize>) {
    let mut order = Vec::new();
    match start {
        None => {
            let mut chosen = None;
            for (i, &ok) in pass.iter().enumerate() {
                order.push(i);
                if !ok {
                    break;
                }
                chosen = Some(i);
            }
            (chosen, order)
        }
        Some(s) if pass[s] => {
            order.push(s);
            let mut chosen = s;
            for i in s + 1..pass.len() {
                order.push(i);
                if !pass[i] {
                    break;
                }
                chosen = i;
            }
            (Some(chosen), order)
        }
        Some(s) => {
            order.push(s);
            for i in (0..s).rev() {
                order.push(i);
                if pass[i] {
                    return (Some(i), order);
                }
            }
            (None, order)
        }
    }
}

pub struct OracleSite {
    pub site: SiteId,
    pub chosen_percentage: u8,
    pub lambda: f32,
    pub evaluated: usize,
    /// Magnitudes the site saw during its search.
    pub magnitudes: Vec<f32>,
}

/// Same sample elements zeroed by both thresholds.
pub fn equivalent(magnitudes: &[f32], a: f32, b: f32) -> bool {
    let below = |l: f32| magnitudes.iter().filter(|&&v| v < l).count();
    below(a) == below(b)
}

/// Full calibration by exhaustive evaluation of every candidate, then the
/// search rule on the resulting table.
pub fn oracle_calibrate<M: SparseLm>(model: &M, docs: &[Document], percentages: &[u8], loss_inc: f64, heuristic: bool) -> Vec<OracleSite> {
    let mut assignment = ThresholdAssignment::new();
    let mut out: Vec<OracleSite> = Vec::new();
    for site in model.threshold_sites() {
        let base = oracle_loss(model, &assignment, docs);
        let mags = oracle_magnitudes(model, &assignment, docs, site.id);
        let lambdas: Vec<f32> = percentages.iter().map(|&p| oracle_lambda(&mags, p)).collect();
        let pass: Vec<bool> = lambdas
            .iter()
            .map(|&l| {
                let mut a = assignment.clone();
                a.set(site.id, l, None).unwrap();
                oracle_loss(model, &a, docs) / base < loss_inc
            })
            .collect();
        let start = if heuristic && site.id.block > 0 {
            let history: Vec<u8> = out
                .iter()
                .filter(|o| o.site.position == site.id.position)
                .map(|o| o.chosen_percentage)
                .collect();
            oracle_mode(&history).map(|m| percentages.iter().position(|&p| p == m).unwrap_or(0))
        } else {
            None
        };
        let (chosen, order) = oracle_search(&pass, start);
        if let Some(c) = chosen {
            assignment.set(site.id, lambdas[c], Some(percentages[c])).unwrap();
        }
        out.push(OracleSite {
            site: site.id,
            chosen_percentage: chosen.map_or(0, |c| percentages[c]),
            lambda: chosen.map_or(0.0, |c| lambdas[c]),
            evaluated: order.len(),
            magnitudes: mags,
        });
    }
    out
}

/// Scoped-thread executor with a fixed worker count.
pub struct Threads(pub usize);

impl Executor for Threads {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for w in 0..self.0 {
                let slots = &slots;
                s.spawn(move || {
                    for i in (w..n).step_by(self.0) {
                        *slots[i].lock().unwrap() = Some(f(i));
                    }
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
    }

    fn threads(&self) -> usize {
        self.0
    }
}

pub fn stop_after(n: usize) -> impl FnMut(&srlm_core::calibrator::CalibProgress) -> ControlFlow<()> {
    move |p| if p.history.len() >= n { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }
}
