// SPDX-License-Identifier: MIT OR Apache-2.0

//! Toy pre-LayerNorm decoder-only transformer with the same threshold-site
//! surface as the RWKV backend.
//!
//! Per block there are two threshold sites: `QKV` (the shared input of the
//! three attention projections, one λ) and `UP` (the feed-forward
//! up-projection input). The ReLU output feeding the down-projection is
//! tapped as `DOWN` but never thresholded. The attention out-projection is
//! neither thresholded nor counted.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::backend::{SparseLm, TapSink};
use crate::error::{Error, Result};
use crate::math::{self, exp_clamped};
use crate::numerics::{linear_forward, LinearMode, Matrix, Vector};
use crate::rng;
use crate::rwkv::LayerNormParams;
use crate::tensors::{NamedTensor, TensorSet};
use crate::threshold::{
    apply_in_place, Arch, MeasuredSite, Position, SiteId, ThresholdAssignment, ThresholdSite,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub max_positions: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.n_blocks == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.max_positions == 0
        {
            return Err(Error::InvalidConfig(format!(
                "transformer dimensions must be positive: {self:?}"
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub ln1: LayerNormParams,
    /// `3d × d`: rows `0..d` are Q, `d..2d` K, `2d..3d` V.
    pub qkv: Matrix,
    pub attn_out: Matrix,
    pub ln2: LayerNormParams,
    /// `4d × d`
    pub up: Matrix,
    /// `d × 4d`
    pub down: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    config: TransformerConfig,
    pub embedding: Matrix,
    /// Learned absolute positions, `max_positions × d`.
    pub positions: Matrix,
    pub blocks: Vec<TransformerBlock>,
    pub ln_out: LayerNormParams,
    pub head: Matrix,
}

/// Key/value history of every block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvCache {
    pub keys: Vec<Vec<Vec<f32>>>,
    pub values: Vec<Vec<Vec<f32>>>,
}

impl KvCache {
    pub fn new(n_blocks: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_blocks],
            values: vec![Vec::new(); n_blocks],
        }
    }

    /// Tokens processed so far.
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Causal multi-head attention of `q` over the cached keys and values.
pub fn attend(q: &[f32], keys: &[Vec<f32>], values: &[Vec<f32>], n_heads: usize) -> Vec<f32> {
    let d = q.len();
    let hd = d / n_heads;
    let scale = 1.0 / math::sqrtf(hd as f32);
    let mut out = vec![0.0f32; d];
    let mut scores = vec![0.0f32; keys.len()];
    for h in 0..n_heads {
        let span = h * hd..(h + 1) * hd;
        let qh = &q[span.clone()];
        for (s, k) in scores.iter_mut().zip(keys) {
            let kh = &k[span.clone()];
            *s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
        }
        let max = scores.iter().fold(f32::NEG_INFINITY, |m, &s| m.max(s));
        let mut total = 0.0f32;
        for s in scores.iter_mut() {
            *s = exp_clamped(*s - max);
            total += *s;
        }
        let oh = &mut out[span.clone()];
        for (s, v) in scores.iter().zip(values) {
            let p = s / total;
            for (o, vv) in oh.iter_mut().zip(&v[span.clone()]) {
                *o += p * vv;
            }
        }
    }
    out
}

fn linear(w: &Matrix, x: &[f32]) -> Result<Vec<f32>> {
    Ok(linear_forward(w, None, x, LinearMode::Event)?.0.into_inner())
}

impl TransformerModel {
    pub fn new(
        config: TransformerConfig,
        embedding: Matrix,
        positions: Matrix,
        blocks: Vec<TransformerBlock>,
        ln_out: LayerNormParams,
        head: Matrix,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let check = |m: &Matrix, rows: usize, cols: usize, context: &'static str| {
            if m.rows() == rows && m.cols() == cols {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context,
                    expected: rows * cols,
                    actual: m.rows() * m.cols(),
                })
            }
        };
        check(&embedding, config.vocab_size, d, "embedding")?;
        check(&positions, config.max_positions, d, "positions")?;
        check(&head, config.vocab_size, d, "head")?;
        if blocks.len() != config.n_blocks {
            return Err(Error::DimensionMismatch {
                context: "block count",
                expected: config.n_blocks,
                actual: blocks.len(),
            });
        }
        for b in &blocks {
            check(&b.qkv, 3 * d, d, "qkv")?;
            check(&b.attn_out, d, d, "attention out")?;
            check(&b.up, 4 * d, d, "up projection")?;
            check(&b.down, d, 4 * d, "down projection")?;
        }
        Ok(Self {
            config,
            embedding,
            positions,
            blocks,
            ln_out,
            head,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn random(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut rng = rng::seeded(seed);
        let mut uniform = |rows: usize, cols: usize, scale: f32| {
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
        };
        let s_in = 1.0 / math::sqrtf(d as f32);
        let s_hidden = 1.0 / math::sqrtf((4 * d) as f32);
        let embedding = uniform(config.vocab_size, d, 0.5);
        let positions = uniform(config.max_positions, d, 0.1);
        let blocks = (0..config.n_blocks)
            .map(|_| TransformerBlock {
                ln1: LayerNormParams::identity(d),
                qkv: uniform(3 * d, d, s_in),
                attn_out: uniform(d, d, s_in),
                ln2: LayerNormParams::identity(d),
                up: uniform(4 * d, d, s_in),
                down: uniform(d, 4 * d, s_hidden),
            })
            .collect();
        let head = uniform(config.vocab_size, d, 0.5 * s_in);
        Self::new(
            config,
            embedding,
            positions,
            blocks,
            LayerNormParams::identity(d),
            head,
        )
    }

    /// One token through every block, appending to `cache`.
    pub fn decoder_step(
        &self,
        cache: &mut KvCache,
        token: u32,
        thresholds: &ThresholdAssignment,
        taps: &mut dyn TapSink,
    ) -> Result<Vector> {
        let c = &self.config;
        if token as usize >= c.vocab_size {
            return Err(Error::TokenOutOfRange {
                token,
                vocab: c.vocab_size,
            });
        }
        let pos = cache.len();
        if pos >= c.max_positions {
            return Err(Error::SequenceTooLong {
                position: pos,
                limit: c.max_positions,
            });
        }
        if cache.keys.len() != c.n_blocks {
            return Err(Error::DimensionMismatch {
                context: "kv cache",
                expected: c.n_blocks,
                actual: cache.keys.len(),
            });
        }
        let d = c.d_model;
        let mut x: Vec<f32> = self
            .embedding
            .row(token as usize)
            .iter()
            .zip(self.positions.row(pos))
            .map(|(e, p)| e + p)
            .collect();
        for (i, b) in self.blocks.iter().enumerate() {
            let site = SiteId::new(i, Position::Qkv);
            let mut h = b.ln1.forward(&x)?.into_inner();
            apply_in_place(&mut h, thresholds.lambda(site));
            taps.tap(site, &h);
            let qkv = linear(&b.qkv, &h)?;
            cache.keys[i].push(qkv[d..2 * d].to_vec());
            cache.values[i].push(qkv[2 * d..].to_vec());
            let attn = attend(&qkv[..d], &cache.keys[i], &cache.values[i], c.n_heads);
            let dx = linear(&b.attn_out, &attn)?;
            add_assign(&mut x, &dx);

            let site = SiteId::new(i, Position::Up);
            let mut h = b.ln2.forward(&x)?.into_inner();
            apply_in_place(&mut h, thresholds.lambda(site));
            taps.tap(site, &h);
            let mut hidden = linear(&b.up, &h)?;
            for v in hidden.iter_mut() {
                *v = v.max(0.0);
            }
            taps.tap(SiteId::new(i, Position::Down), &hidden);
            let dx = linear(&b.down, &hidden)?;
            add_assign(&mut x, &dx);
        }
        let h = self.ln_out.forward(&x)?;
        Ok(linear_forward(&self.head, None, &h, LinearMode::Dense)?.0)
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = vec![
            NamedTensor::matrix("emb.weight", &self.embedding),
            NamedTensor::matrix("pos.weight", &self.positions),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("blocks.{i}.{s}");
            out.extend([
                NamedTensor::vector(p("ln1.weight"), &b.ln1.gamma),
                NamedTensor::vector(p("ln1.bias"), &b.ln1.beta),
                NamedTensor::matrix(p("attn.qkv.weight"), &b.qkv),
                NamedTensor::matrix(p("attn.out.weight"), &b.attn_out),
                NamedTensor::vector(p("ln2.weight"), &b.ln2.gamma),
                NamedTensor::vector(p("ln2.bias"), &b.ln2.beta),
                NamedTensor::matrix(p("ffn.up.weight"), &b.up),
                NamedTensor::matrix(p("ffn.down.weight"), &b.down),
            ]);
        }
        out.extend([
            NamedTensor::vector("ln_out.weight", &self.ln_out.gamma),
            NamedTensor::vector("ln_out.bias", &self.ln_out.beta),
            NamedTensor::matrix("head.weight", &self.head),
        ]);
        out
    }

    pub fn from_tensors(config: TransformerConfig, mut t: TensorSet) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ln = |t: &mut TensorSet, prefix: &str| -> Result<LayerNormParams> {
            Ok(LayerNormParams {
                gamma: t.take_vector(&format!("{prefix}.weight"), d)?,
                beta: t.take_vector(&format!("{prefix}.bias"), d)?,
            })
        };
        let embedding = t.take_matrix("emb.weight", config.vocab_size, d)?;
        let positions = t.take_matrix("pos.weight", config.max_positions, d)?;
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let p = |s: &str| format!("blocks.{i}.{s}");
            blocks.push(TransformerBlock {
                ln1: ln(&mut t, &p("ln1"))?,
                qkv: t.take_matrix(&p("attn.qkv.weight"), 3 * d, d)?,
                attn_out: t.take_matrix(&p("attn.out.weight"), d, d)?,
                ln2: ln(&mut t, &p("ln2"))?,
                up: t.take_matrix(&p("ffn.up.weight"), 4 * d, d)?,
                down: t.take_matrix(&p("ffn.down.weight"), d, 4 * d)?,
            });
        }
        let ln_out = ln(&mut t, "ln_out")?;
        let head = t.take_matrix("head.weight", config.vocab_size, d)?;
        t.finish()?;
        Self::new(config, embedding, positions, blocks, ln_out, head)
    }
}

fn add_assign(x: &mut [f32], dx: &[f32]) {
    for (a, b) in x.iter_mut().zip(dx) {
        *a += b;
    }
}

impl SparseLm for TransformerModel {
    type State = KvCache;

    fn arch(&self) -> Arch {
        Arch::Transformer
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn n_blocks(&self) -> usize {
        self.config.n_blocks
    }

    fn max_sequence_len(&self) -> Option<usize> {
        Some(self.config.max_positions)
    }

    fn threshold_sites(&self) -> Vec<ThresholdSite> {
        let d = self.config.d_model;
        (0..self.config.n_blocks)
            .flat_map(|block| {
                Arch::Transformer
                    .threshold_positions()
                    .iter()
                    .map(move |&position| ThresholdSite {
                        id: SiteId::new(block, position),
                        input_dim: d,
                    })
            })
            .collect()
    }

    fn measured_sites(&self) -> Vec<MeasuredSite> {
        let d = self.config.d_model;
        (0..self.config.n_blocks)
            .flat_map(|block| {
                [
                    (Position::Qkv, d, 3 * d),
                    (Position::Up, d, d),
                    (Position::Down, 4 * d, 4 * d),
                ]
                .into_iter()
                .map(move |(position, input_dim, weight)| MeasuredSite {
                    id: SiteId::new(block, position),
                    input_dim,
                    weight,
                    thresholded: position.is_thresholded(),
                })
            })
            .collect()
    }

    fn fresh_state(&self) -> KvCache {
        KvCache::new(self.config.n_blocks)
    }

    fn step(
        &self,
        state: &mut KvCache,
        token: u32,
        thresholds: &ThresholdAssignment,
        taps: &mut dyn TapSink,
    ) -> Result<Vector> {
        self.decoder_step(state, token, thresholds, taps)
    }
}

/// Overall sparsity (in percent) of an OPT-style block from its QKV,
/// up-projection and down-projection input sparsities, weighted by the
/// number of input elements each consumes (`3d : d : 4d`).
pub fn overall_sparsity_opt(qkv: f64, up: f64, down: f64) -> Result<f64> {
    for v in [qkv, up, down] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::InvalidConfig(format!(
                "sparsity percentage {v} outside [0, 100]"
            )));
        }
    }
    Ok((3.0 * qkv + up + 4.0 * down) / 8.0)
}
