// SPDX-License-Identifier: MIT OR Apache-2.0

//! Operation-count energy and latency model for one token through one
//! RWKV block on an event-driven processor.
//!
//! Per linear layer with input density δ:
//!
//! ```text
//!   MACs    = δ · in · out
//!   compute = MACs
//!   memory  = memory_factor · MACs + out          (weight reads + writes)
//! ```
//!
//! Non-linear work (token shift, sigmoid, WKV, ...) is a fixed fraction `f`
//! of all operations at full density. It is assigned to the sub-blocks by
//! `time_mix_overhead_share` and modeled as a per-sub-block multiplier on the
//! linear counts, so it shrinks with density like the layer it accompanies:
//!
//! ```text
//!   m_s = 1 + f/(1−f) · share_s · L_total / L_s     (L = full-density MACs)
//! ```
//!
//! Energy and latency are `ops · cost-per-op`, separately for compute and
//! memory.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::threshold::Position;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SubBlock {
    TimeMix,
    ChannelMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearLayer {
    pub position: Position,
    pub in_dim: usize,
    pub out_dim: usize,
    pub sub_block: SubBlock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockShape {
    pub d_model: usize,
    pub layers: Vec<LinearLayer>,
}

impl BlockShape {
    /// Four `d → d` Time-Mix projections, then Channel-Mix `R: d → d`,
    /// `K: d → 4d`, `V: 4d → d`.
    pub fn rwkv(d: usize) -> Self {
        let l = |position, in_dim, out_dim, sub_block| LinearLayer {
            position,
            in_dim,
            out_dim,
            sub_block,
        };
        use Position::*;
        use SubBlock::*;
        Self {
            d_model: d,
            layers: alloc::vec![
                l(TmR, d, d, TimeMix),
                l(TmK, d, d, TimeMix),
                l(TmV, d, d, TimeMix),
                l(TmOut, d, d, TimeMix),
                l(CmR, d, d, ChannelMix),
                l(CmK, d, 4 * d, ChannelMix),
                l(CmV, 4 * d, d, ChannelMix),
            ],
        }
    }

    fn full_macs(&self, sub: SubBlock) -> f64 {
        self.layers
            .iter()
            .filter(|l| l.sub_block == sub)
            .map(|l| (l.in_dim * l.out_dim) as f64)
            .sum()
    }
}

/// Input density (1 − sparsity) per linear layer.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct DensityProfile {
    pub densities: BTreeMap<Position, f64>,
}

impl DensityProfile {
    /// Every layer of `shape` at `density`.
    pub fn uniform(shape: &BlockShape, density: f64) -> Self {
        Self {
            densities: shape.layers.iter().map(|l| (l.position, density)).collect(),
        }
    }

    pub fn with(mut self, position: Position, density: f64) -> Self {
        self.densities.insert(position, density);
        self
    }

    /// From per-layer sparsity fractions.
    pub fn from_sparsity(sparsity: impl IntoIterator<Item = (Position, f64)>) -> Self {
        Self {
            densities: sparsity.into_iter().map(|(p, s)| (p, 1.0 - s)).collect(),
        }
    }

    pub fn get(&self, position: Position) -> Option<f64> {
        self.densities.get(&position).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostConfig {
    /// µJ per compute op.
    pub energy_compute: f64,
    /// µJ per memory op.
    pub energy_memory: f64,
    /// ms per compute op.
    pub latency_compute: f64,
    /// ms per memory op.
    pub latency_memory: f64,
    pub memory_factor: f64,
    pub overhead_fraction: f64,
    /// Portion of the non-linear overhead attributed to Time-Mix.
    pub time_mix_overhead_share: f64,
}

/// Non-linear ops as a fraction of all ops at full density.
pub const DEFAULT_OVERHEAD_FRACTION: f64 = 0.03;

/// Channel-Mix down-projection density of the dense reference block,
/// fitted together with [`CostConfig::SENECA_DEFAULT`].
pub const SENECA_NATURAL_DENSITY: f64 = 0.2;

impl CostConfig {
    /// Constants fitted to the dense SENECA measurements of a `d = 2560`
    /// block (see [`fit_reference`]).
    pub const SENECA_DEFAULT: CostConfig = CostConfig {
        energy_compute: 4.100_071_090_946_651_4e-7,
        energy_memory: 4.100_071_090_946_651_4e-7,
        latency_compute: 7.324_393_996_464_588e-8,
        latency_memory: 7.250_663_855_861_952e-8,
        memory_factor: 1.484_543_955_717_365_9,
        overhead_fraction: DEFAULT_OVERHEAD_FRACTION,
        time_mix_overhead_share: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let constants = [
            self.energy_compute,
            self.energy_memory,
            self.latency_compute,
            self.latency_memory,
            self.memory_factor,
        ];
        if constants.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "cost constants must be finite and non-negative: {self:?}"
            )));
        }
        if !(0.0..=0.1).contains(&self.overhead_fraction) {
            return Err(Error::InvalidConfig(format!(
                "overhead fraction {} outside [0, 0.1]",
                self.overhead_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.time_mix_overhead_share) {
            return Err(Error::InvalidConfig(format!(
                "time-mix overhead share {} outside [0, 1]",
                self.time_mix_overhead_share
            )));
        }
        Ok(())
    }

    /// Every constant multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            energy_compute: self.energy_compute * k,
            energy_memory: self.energy_memory * k,
            latency_compute: self.latency_compute * k,
            latency_memory: self.latency_memory * k,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OpCounts {
    pub compute: f64,
    pub memory: f64,
}

impl OpCounts {
    fn add(self, o: Self) -> Self {
        Self {
            compute: self.compute + o.compute,
            memory: self.memory + o.memory,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockOps {
    pub time_mix: OpCounts,
    pub channel_mix: OpCounts,
}

impl BlockOps {
    pub fn overall(&self) -> OpCounts {
        self.time_mix.add(self.channel_mix)
    }
}

/// Per-sub-block operation counts of one token through `shape`.
pub fn block_op_counts(
    shape: &BlockShape,
    profile: &DensityProfile,
    config: &CostConfig,
) -> Result<BlockOps> {
    config.validate()?;
    let mut ops = BlockOps::default();
    for l in &shape.layers {
        let density = profile.get(l.position).ok_or_else(|| {
            Error::InvalidConfig(format!("no density for layer {}", l.position))
        })?;
        if !(0.0..=1.0).contains(&density) {
            return Err(Error::InvalidConfig(format!(
                "density {density} of {} outside [0, 1]",
                l.position
            )));
        }
        let macs = density * (l.in_dim * l.out_dim) as f64;
        let c = OpCounts {
            compute: macs,
            memory: config.memory_factor * macs + l.out_dim as f64,
        };
        let slot = match l.sub_block {
            SubBlock::TimeMix => &mut ops.time_mix,
            SubBlock::ChannelMix => &mut ops.channel_mix,
        };
        *slot = slot.add(c);
    }
    let f = config.overhead_fraction;
    if f > 0.0 {
        let (tm, cm) = (shape.full_macs(SubBlock::TimeMix), shape.full_macs(SubBlock::ChannelMix));
        let total = tm + cm;
        let k = f / (1.0 - f);
        let share = config.time_mix_overhead_share;
        for (slot, full, s) in [
            (&mut ops.time_mix, tm, share),
            (&mut ops.channel_mix, cm, 1.0 - share),
        ] {
            if full > 0.0 {
                let m = 1.0 + k * s * total / full;
                slot.compute *= m;
                slot.memory *= m;
            }
        }
    }
    Ok(ops)
}

/// Compute / memory / total of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostCell {
    pub compute: f64,
    pub memory: f64,
    pub total: f64,
}

impl CostCell {
    fn new(compute: f64, memory: f64) -> Self {
        Self {
            compute,
            memory,
            total: compute + memory,
        }
    }

    fn entries(&self) -> [f64; 3] {
        [self.compute, self.memory, self.total]
    }

    fn map2(&self, o: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            compute: f(self.compute, o.compute),
            memory: f(self.memory, o.memory),
            total: f(self.total, o.total),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubBlockCost {
    /// µJ
    pub energy: CostCell,
    /// ms
    pub latency: CostCell,
}

impl SubBlockCost {
    fn map2(&self, o: &Self, f: impl Fn(f64, f64) -> f64 + Copy) -> Self {
        Self {
            energy: self.energy.map2(&o.energy, f),
            latency: self.latency.map2(&o.latency, f),
        }
    }

    fn entries(&self) -> impl Iterator<Item = f64> {
        self.energy.entries().into_iter().chain(self.latency.entries())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostReport {
    pub time_mix: SubBlockCost,
    pub channel_mix: SubBlockCost,
    pub overall: SubBlockCost,
}

impl CostReport {
    fn map2(&self, o: &Self, f: impl Fn(f64, f64) -> f64 + Copy) -> Self {
        Self {
            time_mix: self.time_mix.map2(&o.time_mix, f),
            channel_mix: self.channel_mix.map2(&o.channel_mix, f),
            overall: self.overall.map2(&o.overall, f),
        }
    }

    /// All 18 entries: sub-block (TM, CM, overall) × quantity (energy,
    /// latency) × row (compute, memory, total).
    pub fn entries(&self) -> Vec<f64> {
        [self.time_mix, self.channel_mix, self.overall]
            .iter()
            .flat_map(|s| s.entries())
            .collect()
    }
}

fn sub_cost(ops: OpCounts, c: &CostConfig) -> SubBlockCost {
    SubBlockCost {
        energy: CostCell::new(ops.compute * c.energy_compute, ops.memory * c.energy_memory),
        latency: CostCell::new(ops.compute * c.latency_compute, ops.memory * c.latency_memory),
    }
}

pub fn cost(ops: &BlockOps, config: &CostConfig) -> Result<CostReport> {
    config.validate()?;
    Ok(CostReport {
        time_mix: sub_cost(ops.time_mix, config),
        channel_mix: sub_cost(ops.channel_mix, config),
        overall: sub_cost(ops.overall(), config),
    })
}

/// Elementwise `dense / sparse`.
pub fn improvement(dense: &CostReport, sparse: &CostReport) -> Result<CostReport> {
    if sparse.entries().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::DivisionByZero("sparse cost entry"));
    }
    Ok(dense.map2(sparse, |d, s| d / s))
}

/// Every entry multiplied by `n_blocks · n_tokens`.
pub fn scale_to_model(report: &CostReport, n_blocks: usize, n_tokens: usize) -> Result<CostReport> {
    if n_blocks == 0 || n_tokens == 0 {
        return Err(Error::InvalidConfig("scale multipliers must be positive".into()));
    }
    let k = (n_blocks * n_tokens) as f64;
    Ok(report.map2(report, |v, _| v * k))
}

/// Reference measurements of one 3B RWKV block (`d = 2560`) on SENECA:
/// energy in µJ and latency in ms.
pub mod reference {
    use super::{CostCell, CostReport, SubBlockCost};

    const fn cell(compute: f64, memory: f64, total: f64) -> CostCell {
        CostCell {
            compute,
            memory,
            total,
        }
    }

    pub const D_MODEL: usize = 2560;
    pub const N_BLOCKS: usize = 32;

    pub const DENSE: CostReport = CostReport {
        time_mix: SubBlockCost {
            energy: cell(11.9, 17.6, 29.5),
            latency: cell(2.1, 3.1, 5.2),
        },
        channel_mix: SubBlockCost {
            energy: cell(15.5, 23.1, 38.6),
            latency: cell(2.8, 4.1, 6.9),
        },
        overall: SubBlockCost {
            energy: cell(27.4, 40.7, 68.1),
            latency: cell(4.9, 7.2, 12.1),
        },
    };

    pub const SPARSE: CostReport = CostReport {
        time_mix: SubBlockCost {
            energy: cell(5.0, 7.4, 12.4),
            latency: cell(0.9, 1.3, 2.2),
        },
        channel_mix: SubBlockCost {
            energy: cell(9.3, 13.9, 23.2),
            latency: cell(1.7, 2.5, 4.2),
        },
        overall: SubBlockCost {
            energy: cell(14.3, 21.3, 35.6),
            latency: cell(2.6, 3.8, 6.4),
        },
    };
}

/// Largest `|model − reference| / reference` over all entries.
pub fn max_relative_error(model: &CostReport, reference: &CostReport) -> f64 {
    model
        .entries()
        .iter()
        .zip(reference.entries())
        .map(|(m, r)| ((m - r) / r).abs())
        .fold(0.0, f64::max)
}

/// Densities implied by a sparse/dense reference pair, given the dense
/// down-projection density `natural`: Time-Mix layers share one density
/// equal to its compute ratio; Channel-Mix R and K share the density that
/// reproduces the Channel-Mix compute ratio with V held at `natural`.
pub fn back_derived_profile(
    shape: &BlockShape,
    dense: &CostReport,
    sparse: &CostReport,
    natural: f64,
) -> DensityProfile {
    let tm = sparse.time_mix.energy.compute / dense.time_mix.energy.compute;
    let cm_ratio = sparse.channel_mix.energy.compute / dense.channel_mix.energy.compute;
    let d2 = |p: Position| {
        shape
            .layers
            .iter()
            .find(|l| l.position == p)
            .map_or(0.0, |l| (l.in_dim * l.out_dim) as f64)
    };
    let (rk, v) = (d2(Position::CmR) + d2(Position::CmK), d2(Position::CmV));
    let cm = (cm_ratio * (rk + natural * v) - natural * v) / rk;
    DensityProfile::uniform(shape, tm)
        .with(Position::CmR, cm)
        .with(Position::CmK, cm)
        .with(Position::CmV, natural)
}

/// Search grid of [`fit_reference`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitGrid {
    pub natural_min: f64,
    pub natural_max: f64,
    pub natural_steps: usize,
    /// `None` spreads the overhead in proportion to full-density MACs.
    pub share_steps: Option<usize>,
}

impl Default for FitGrid {
    fn default() -> Self {
        Self {
            natural_min: 0.2,
            natural_max: 0.5,
            natural_steps: 60,
            share_steps: Some(100),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub config: CostConfig,
    pub natural_density: f64,
    pub max_relative_error: f64,
}

/// `argmin_a Σ ((a·x − y) / y)²`
fn rel_scale(x: &[f64], y: &[f64]) -> f64 {
    let (num, den) = x.iter().zip(y).fold((0.0, 0.0), |(n, d), (x, y)| {
        let r = x / y;
        (n + r, d + r * r)
    });
    num / den
}

/// Fits per-op constants and the dense down-projection density to a dense
/// reference report by grid search over (natural density, overhead
/// share). For each grid point: the compute energy constant and then the
/// memory factor (with memory energy per op equal to compute energy per op)
/// by relative least squares over the three sub-block cells, and the two
/// latency constants likewise. The grid point with the smallest maximum
/// relative error over all 18 entries wins.
pub fn fit_reference(
    shape: &BlockShape,
    dense: &CostReport,
    overhead_fraction: f64,
    grid: FitGrid,
) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    let (tm_full, cm_full) = (shape.full_macs(SubBlock::TimeMix), shape.full_macs(SubBlock::ChannelMix));
    let shares: Vec<f64> = match grid.share_steps {
        Some(n) => (0..=n).map(|i| i as f64 / n.max(1) as f64).collect(),
        None => alloc::vec![tm_full / (tm_full + cm_full)],
    };
    let subs = |r: &CostReport| [r.time_mix, r.channel_mix, r.overall];
    for i in 0..=grid.natural_steps {
        let natural = grid.natural_min
            + (grid.natural_max - grid.natural_min) * i as f64 / grid.natural_steps.max(1) as f64;
        let profile = DensityProfile::uniform(shape, 1.0).with(Position::CmV, natural);
        for &share in &shares {
            let unit = CostConfig {
                energy_compute: 1.0,
                energy_memory: 1.0,
                latency_compute: 1.0,
                latency_memory: 1.0,
                memory_factor: 0.0,
                overhead_fraction,
                time_mix_overhead_share: share,
            };
            // memory = memory_factor · A + B, linear in memory_factor
            let b_ops = block_op_counts(shape, &profile, &unit)?;
            let a_ops = block_op_counts(shape, &profile, &CostConfig { memory_factor: 1.0, ..unit })?;
            let triple = |o: &BlockOps, f: fn(&OpCounts) -> f64| {
                [f(&o.time_mix), f(&o.channel_mix), f(&o.overall())]
            };
            let compute = triple(&b_ops, |o| o.compute);
            let mem_b = triple(&b_ops, |o| o.memory);
            let mem_a1 = triple(&a_ops, |o| o.memory);
            let mem_a: Vec<f64> = mem_a1.iter().zip(&mem_b).map(|(a, b)| a - b).collect();

            let y = |f: fn(&SubBlockCost) -> f64| subs(dense).map(|s| f(&s));
            let e_c = rel_scale(&compute, &y(|s| s.energy.compute));
            let ym = y(|s| s.energy.memory);
            let (num, den) = (0..3).fold((0.0, 0.0), |(n, d), j| {
                let a = e_c * mem_a[j] / ym[j];
                let b = (e_c * mem_b[j] - ym[j]) / ym[j];
                (n - a * b, d + a * a)
            });
            let mf = num / den;
            let mem: Vec<f64> = (0..3).map(|j| mf * mem_a[j] + mem_b[j]).collect();
            let l_c = rel_scale(&compute, &y(|s| s.latency.compute));
            let l_m = rel_scale(&mem, &y(|s| s.latency.memory));
            let config = CostConfig {
                energy_compute: e_c,
                energy_memory: e_c,
                latency_compute: l_c,
                latency_memory: l_m,
                memory_factor: mf,
                overhead_fraction,
                time_mix_overhead_share: share,
            };
            if config.validate().is_err() {
                continue;
            }
            let report = cost(&block_op_counts(shape, &profile, &config)?, &config)?;
            let err = max_relative_error(&report, dense);
            if best.map_or(true, |b| err < b.max_relative_error) {
                best = Some(FitResult {
                    config,
                    natural_density: natural,
                    max_relative_error: err,
                });
            }
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("fit grid produced no valid configuration".into()))
}
