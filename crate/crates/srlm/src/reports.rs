// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use serde::Serialize;
use srlm_core::metrics::SparsityReport;
use srlm_core::train::LossPoint;

use crate::error::{self, Result};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    error::write(path, text)
}

fn to_csv<R: Serialize>(rows: impl IntoIterator<Item = R>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is UTF-8")
}

#[derive(Serialize)]
struct SiteRow<'a> {
    block: usize,
    position: &'a str,
    input_dim: usize,
    weight: usize,
    thresholded: bool,
    lambda: f32,
    tokens: u64,
    zeros: u64,
    sparsity: f64,
}

/// One row per tapped site, for plotting.
pub fn sparsity_csv(report: &SparsityReport) -> String {
    to_csv(report.sites.iter().map(|s| SiteRow {
        block: s.site.block,
        position: s.site.position.label(),
        input_dim: s.input_dim,
        weight: s.weight,
        thresholded: s.thresholded,
        lambda: s.lambda,
        tokens: s.tokens,
        zeros: s.zeros,
        sparsity: s.sparsity,
    }))
}

pub fn curve_csv(curve: &[LossPoint]) -> String {
    to_csv(curve)
}

/// `sparsity 54.23%  loss 1.8464  increase 0.76%`
pub fn table_row(report: &SparsityReport) -> String {
    let mut row = format!(
        "sparsity {:.2}%  loss {:.4}",
        100.0 * report.weighted_average_sparsity,
        report.loss
    );
    if let Some(inc) = report.loss_increase_percent {
        row.push_str(&format!("  increase {inc:.2}%"));
    }
    row
}
