// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cost-model config files and the two-table text layout.
//!
//! A cost config is TOML with any of the `CostConfig` fields. `preset =
//! "seneca-default"` fills the rest from the fitted constants. A density
//! profile is TOML mapping positions to input density:
//!
//! ```toml
//! TM_R = 0.42
//! CM_V = 0.2
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use srlm_core::hwcost::{CostCell, CostConfig, CostReport, DensityProfile};

use crate::error::{self, Error, Result};

pub const SENECA_PRESET: &str = "seneca-default";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    preset: Option<String>,
    energy_compute: Option<f64>,
    energy_memory: Option<f64>,
    latency_compute: Option<f64>,
    latency_memory: Option<f64>,
    memory_factor: Option<f64>,
    overhead_fraction: Option<f64>,
    time_mix_overhead_share: Option<f64>,
}

pub fn preset(name: &str) -> Result<CostConfig> {
    match name {
        SENECA_PRESET => Ok(CostConfig::SENECA_DEFAULT),
        other => Err(Error::Config(format!("unknown cost preset {other:?}"))),
    }
}

pub fn parse_cost_config(text: &str) -> std::result::Result<CostConfig, String> {
    let f: CostFile = toml::from_str(text).map_err(|e| e.to_string())?;
    let base = match &f.preset {
        Some(p) => Some(preset(p).map_err(|e| e.to_string())?),
        None => None,
    };
    let pick = |v: Option<f64>, from_base: fn(&CostConfig) -> f64, name: &str| {
        v.or(base.as_ref().map(from_base))
            .ok_or_else(|| format!("missing {name} (or set preset)"))
    };
    let c = CostConfig {
        energy_compute: pick(f.energy_compute, |c| c.energy_compute, "energy_compute")?,
        energy_memory: pick(f.energy_memory, |c| c.energy_memory, "energy_memory")?,
        latency_compute: pick(f.latency_compute, |c| c.latency_compute, "latency_compute")?,
        latency_memory: pick(f.latency_memory, |c| c.latency_memory, "latency_memory")?,
        memory_factor: pick(f.memory_factor, |c| c.memory_factor, "memory_factor")?,
        overhead_fraction: pick(f.overhead_fraction, |c| c.overhead_fraction, "overhead_fraction")?,
        time_mix_overhead_share: pick(
            f.time_mix_overhead_share,
            |c| c.time_mix_overhead_share,
            "time_mix_overhead_share",
        )?,
    };
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

pub fn load_cost_config(path: &Path) -> Result<CostConfig> {
    parse_cost_config(&error::read_string(path)?).map_err(|m| Error::Config(format!("{}: {m}", path.display())))
}

pub fn load_density(path: &Path) -> Result<DensityProfile> {
    let text = error::read_string(path)?;
    let p: DensityProfile = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some((pos, d)) = p.densities.iter().find(|(_, d)| !(0.0..=1.0).contains(*d)) {
        return Err(Error::Config(format!("{}: density {d} for {pos} outside [0, 1]", path.display())));
    }
    Ok(p)
}

pub fn density_toml(profile: &DensityProfile) -> String {
    toml::to_string(profile).expect("density profile serializes")
}

/// Energy and latency tables, Sparse next to Dense for each sub-block,
/// followed by the improvement ratio of every total.
pub fn render(dense: &CostReport, sparse: &CostReport, ratio: &CostReport) -> String {
    let mut out = String::new();
    let subs = |r: &CostReport| [r.time_mix, r.channel_mix, r.overall];
    for (title, pick) in [
        ("Energy (uJ)", (|s: &srlm_core::hwcost::SubBlockCost| s.energy) as fn(&_) -> CostCell),
        ("Latency (ms)", |s| s.latency),
    ] {
        writeln!(out, "{title:<14}{:>22}{:>22}{:>22}", "Time-Mix", "Channel-Mix", "Overall").unwrap();
        writeln!(out, "{:<14}{}", "", "      Sparse     Dense".repeat(3)).unwrap();
        let (d, s, r) = (subs(dense), subs(sparse), subs(ratio));
        for (row, get) in [
            ("Computation", (|c: &CostCell| c.compute) as fn(&CostCell) -> f64),
            ("Memory", |c| c.memory),
            ("Total", |c| c.total),
        ] {
            write!(out, "{row:<14}").unwrap();
            for i in 0..3 {
                write!(out, "{:>12.4}{:>10.4}", get(&pick(&s[i])), get(&pick(&d[i]))).unwrap();
            }
            out.push('\n');
        }
        write!(out, "{:<14}", "Improvement").unwrap();
        for r in &r {
            write!(out, "{:>21.2}x", pick(r).total).unwrap();
        }
        out.push_str("\n\n");
    }
    out
}
