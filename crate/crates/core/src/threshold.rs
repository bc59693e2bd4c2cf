// SPDX-License-Identifier: MIT OR Apache-2.0

//! Threshold sites and the magnitude-thresholding operator.
//!
//! A site is the input of one linear layer inside one block. Sites are
//! ordered by `(block, position)`; within a block the order follows the
//! dataflow, which is also the order in which the calibrator visits them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Model family a site (or a model file) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Arch {
    Rwkv,
    Transformer,
}

impl Arch {
    pub fn label(self) -> &'static str {
        match self {
            Arch::Rwkv => "rwkv",
            Arch::Transformer => "transformer",
        }
    }

    /// Thresholded positions of one block, in calibration order.
    pub fn threshold_positions(self) -> &'static [Position] {
        match self {
            Arch::Rwkv => &[
                Position::TmR,
                Position::TmK,
                Position::TmV,
                Position::TmOut,
                Position::CmR,
                Position::CmK,
            ],
            Arch::Transformer => &[Position::Qkv, Position::Up],
        }
    }

    /// Every tapped position of one block, thresholded or not.
    pub fn measured_positions(self) -> &'static [Position] {
        match self {
            Arch::Rwkv => &[
                Position::TmR,
                Position::TmK,
                Position::TmV,
                Position::TmOut,
                Position::CmR,
                Position::CmK,
                Position::CmV,
            ],
            Arch::Transformer => &[Position::Qkv, Position::Up, Position::Down],
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rwkv" => Ok(Arch::Rwkv),
            "transformer" => Ok(Arch::Transformer),
            other => Err(Error::InvalidConfig(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Input of a particular linear layer within a block.
///
/// Declaration order is the within-block calibration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Position {
    /// Time-Mix receptance projection.
    TmR,
    /// Time-Mix key projection.
    TmK,
    /// Time-Mix value projection.
    TmV,
    /// Time-Mix output projection (input is `σ(r) ⊙ wkv`).
    TmOut,
    /// Channel-Mix receptance projection.
    CmR,
    /// Channel-Mix up-projection.
    CmK,
    /// Channel-Mix down-projection; naturally sparse after ReLU², never thresholded.
    CmV,
    /// Shared input of the fused Q/K/V projections.
    Qkv,
    /// Feed-forward up-projection.
    Up,
    /// Feed-forward down-projection; naturally sparse after ReLU, never thresholded.
    Down,
}

impl Position {
    pub const ALL: [Position; 10] = [
        Position::TmR,
        Position::TmK,
        Position::TmV,
        Position::TmOut,
        Position::CmR,
        Position::CmK,
        Position::CmV,
        Position::Qkv,
        Position::Up,
        Position::Down,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Position::TmR => "TM_R",
            Position::TmK => "TM_K",
            Position::TmV => "TM_V",
            Position::TmOut => "TM_Out",
            Position::CmR => "CM_R",
            Position::CmK => "CM_K",
            Position::CmV => "CM_V",
            Position::Qkv => "QKV",
            Position::Up => "UP",
            Position::Down => "DOWN",
        }
    }

    /// 1-based index within the block.
    pub fn ordinal(self) -> u8 {
        match self {
            Position::TmR | Position::Qkv => 1,
            Position::TmK | Position::Up => 2,
            Position::TmV | Position::Down => 3,
            Position::TmOut => 4,
            Position::CmR => 5,
            Position::CmK => 6,
            Position::CmV => 7,
        }
    }

    pub fn arch(self) -> Arch {
        match self {
            Position::Qkv | Position::Up | Position::Down => Arch::Transformer,
            _ => Arch::Rwkv,
        }
    }

    pub fn is_thresholded(self) -> bool {
        !matches!(self, Position::CmV | Position::Down)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Position {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Position::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownSite(format!("position {s:?}")))
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Position {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Position {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = <alloc::string::String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SiteId {
    pub block: usize,
    pub position: Position,
}

impl SiteId {
    pub fn new(block: usize, position: Position) -> Self {
        Self { block, position }
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.block, self.position)
    }
}

/// A thresholded linear-layer input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdSite {
    pub id: SiteId,
    pub input_dim: usize,
}

/// A tapped linear-layer input and its weight in the averaged sparsity.
///
/// `weight` is the number of input elements the layer(s) behind the tap
/// consume per token; a shared input feeding three projections counts three
/// times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeasuredSite {
    pub id: SiteId,
    pub input_dim: usize,
    pub weight: usize,
    pub thresholded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SiteThreshold {
    pub lambda: f32,
    pub target_percentage: Option<u8>,
}

/// Per-site λ values. Sites that are not present behave as λ = 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdAssignment {
    sites: BTreeMap<SiteId, SiteThreshold>,
}

impl ThresholdAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lambda(&self, site: SiteId) -> f32 {
        self.sites.get(&site).map_or(0.0, |s| s.lambda)
    }

    pub fn get(&self, site: SiteId) -> Option<&SiteThreshold> {
        self.sites.get(&site)
    }

    pub fn set(&mut self, site: SiteId, lambda: f32, target_percentage: Option<u8>) -> Result<()> {
        check_lambda(lambda)?;
        if !site.position.is_thresholded() {
            return Err(Error::UnknownSite(format!("{site} is not a threshold site")));
        }
        self.sites.insert(
            site,
            SiteThreshold {
                lambda,
                target_percentage,
            },
        );
        Ok(())
    }

    /// Copy of `self` with one site replaced.
    pub fn with(&self, site: SiteId, lambda: f32, target_percentage: Option<u8>) -> Result<Self> {
        let mut next = self.clone();
        next.set(site, lambda, target_percentage)?;
        Ok(next)
    }

    pub fn remove(&mut self, site: SiteId) -> Option<SiteThreshold> {
        self.sites.remove(&site)
    }

    pub fn iter(&self) -> impl Iterator<Item = (SiteId, SiteThreshold)> + '_ {
        self.sites.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Checks every entry against the sites a model actually exposes.
    pub fn validate(&self, sites: &[ThresholdSite]) -> Result<()> {
        for (id, t) in &self.sites {
            if !sites.iter().any(|s| s.id == *id) {
                return Err(Error::UnknownSite(format!("{id}")));
            }
            check_lambda(t.lambda)?;
        }
        Ok(())
    }
}

impl FromIterator<(SiteId, SiteThreshold)> for ThresholdAssignment {
    fn from_iter<I: IntoIterator<Item = (SiteId, SiteThreshold)>>(iter: I) -> Self {
        Self {
            sites: iter.into_iter().collect(),
        }
    }
}

fn check_lambda(lambda: f32) -> Result<()> {
    // also rejects NaN
    if lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeLambda(lambda))
    }
}

/// `x` where `|x| ≥ λ`, exactly `0.0` elsewhere.
pub fn apply(x: &[f32], lambda: f32) -> Result<Vector> {
    check_lambda(lambda)?;
    let mut out = Vector::new(x.to_vec())?.into_inner();
    apply_in_place(&mut out, lambda);
    Ok(Vector::from_raw(out))
}

/// In-place [`apply`]. A zero λ leaves the slice untouched.
#[inline]
pub fn apply_in_place(x: &mut [f32], lambda: f32) {
    if lambda == 0.0 {
        return;
    }
    for v in x.iter_mut() {
        if !(v.abs() >= lambda) {
            *v = 0.0;
        }
    }
}

/// Sorts sites into calibration order.
pub fn ordered(mut sites: Vec<ThresholdSite>) -> Vec<ThresholdSite> {
    sites.sort_by_key(|s| s.id);
    sites
}
