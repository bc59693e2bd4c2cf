// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token-by-token RWKV (v4-style) forward pass with threshold sites.
//!
//! ```text
//! token → embedding → LN0
//!   → for each block:
//!       → LN1 → Time-Mix   → residual add
//!       → LN2 → Channel-Mix → residual add
//!   → LN_out → head → logits
//! ```
//!
//! Time-Mix thresholds the inputs of its R, K, V and Out projections;
//! Channel-Mix thresholds the inputs of R and K. The Channel-Mix V input is
//! the ReLU² hidden state, which is tapped for measurement but never
//! thresholded.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::backend::{document_nll, SparseLm, TapSink};
use crate::error::{Error, Result};
use crate::math::{self, exp_clamped};
use crate::numerics::{
    ensure_finite, layer_norm, linear_forward, relu_squared, sigmoid, LinearMode, Matrix, Vector,
};
use crate::rng;
use crate::tensors::{NamedTensor, TensorSet};
use crate::threshold::{
    apply_in_place, Arch, MeasuredSite, Position, SiteId, ThresholdAssignment, ThresholdSite,
};

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Initial running maximum of the WKV state. Finite so the state invariants
/// hold; any exponent involving it clamps to `e^-30` against a zero numerator.
pub const WKV_INITIAL_MAX: f32 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RwkvConfig {
    pub vocab_size: usize,
    pub n_blocks: usize,
    pub d_model: usize,
}

impl RwkvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.n_blocks == 0 || self.d_model == 0 {
            return Err(Error::InvalidConfig(format!(
                "rwkv dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vector> {
        layer_norm(x, &self.gamma, &self.beta, LAYER_NORM_EPS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeMixParams {
    pub mix_r: Vec<f32>,
    pub mix_k: Vec<f32>,
    pub mix_v: Vec<f32>,
    /// Per-channel decay rate `w`; the state is scaled by `e^-w` per token.
    pub decay: Vec<f32>,
    /// Per-channel bonus `u` applied to the current token.
    pub bonus: Vec<f32>,
    pub receptance: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMixParams {
    pub mix_r: Vec<f32>,
    pub mix_k: Vec<f32>,
    /// `d × d`
    pub receptance: Matrix,
    /// `4d × d` up-projection.
    pub key: Matrix,
    /// `d × 4d` down-projection.
    pub value: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwkvBlock {
    pub ln1: LayerNormParams,
    pub time_mix: TimeMixParams,
    pub ln2: LayerNormParams,
    pub channel_mix: ChannelMixParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwkvModel {
    config: RwkvConfig,
    pub embedding: Matrix,
    pub ln_in: LayerNormParams,
    pub blocks: Vec<RwkvBlock>,
    pub ln_out: LayerNormParams,
    pub head: Matrix,
}

/// Stabilized WKV accumulator: the true numerator and denominator are
/// `num·e^max` and `den·e^max`.
#[derive(Debug, Clone, PartialEq)]
pub struct WkvState {
    pub num: Vec<f32>,
    pub den: Vec<f32>,
    pub max: Vec<f32>,
}

impl WkvState {
    pub fn new(d: usize) -> Self {
        Self {
            num: vec![0.0; d],
            den: vec![0.0; d],
            max: vec![WKV_INITIAL_MAX; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    /// Previous token's Time-Mix input.
    pub tm_prev: Vec<f32>,
    /// Previous token's Channel-Mix input.
    pub cm_prev: Vec<f32>,
    pub wkv: WkvState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub blocks: Vec<BlockState>,
}

impl RecurrentState {
    pub fn new(config: &RwkvConfig) -> Self {
        let d = config.d_model;
        Self {
            blocks: (0..config.n_blocks)
                .map(|_| BlockState {
                    tm_prev: vec![0.0; d],
                    cm_prev: vec![0.0; d],
                    wkv: WkvState::new(d),
                })
                .collect(),
        }
    }
}

/// `μ ⊙ x_now + (1 − μ) ⊙ x_prev`
pub fn token_shift_mix(x_now: &[f32], x_prev: &[f32], mu: &[f32]) -> Result<Vector> {
    if x_prev.len() != x_now.len() || mu.len() != x_now.len() {
        return Err(Error::DimensionMismatch {
            context: "token shift",
            expected: x_now.len(),
            actual: if x_prev.len() != x_now.len() {
                x_prev.len()
            } else {
                mu.len()
            },
        });
    }
    Ok(Vector::from_raw(
        x_now
            .iter()
            .zip(x_prev)
            .zip(mu)
            .map(|((&a, &b), &m)| m * a + (1.0 - m) * b)
            .collect(),
    ))
}

/// One step of the per-channel WKV recurrence,
///
/// ```text
/// wkv_t = (a_{t-1} + e^{u+k_t} v_t) / (b_{t-1} + e^{u+k_t})
/// a_t   = e^{-w} a_{t-1} + e^{k_t} v_t
/// b_t   = e^{-w} b_{t-1} + e^{k_t}
/// ```
///
/// evaluated relative to a running maximum exponent so no intermediate
/// `exp` exceeds 1.
pub fn wkv_step(
    state: &mut WkvState,
    k: &[f32],
    v: &[f32],
    w: &[f32],
    u: &[f32],
) -> Result<Vector> {
    let d = state.num.len();
    for (len, context) in [
        (state.den.len(), "wkv state"),
        (state.max.len(), "wkv state"),
        (k.len(), "wkv key"),
        (v.len(), "wkv value"),
        (w.len(), "wkv decay"),
        (u.len(), "wkv bonus"),
    ] {
        if len != d {
            return Err(Error::DimensionMismatch {
                context,
                expected: d,
                actual: len,
            });
        }
    }
    ensure_finite(&state.num, "wkv state")?;
    ensure_finite(&state.den, "wkv state")?;
    ensure_finite(&state.max, "wkv state")?;

    let mut out = vec![0.0f32; d];
    for i in 0..d {
        let (a, b, p_prev) = (state.num[i], state.den[i], state.max[i]);
        let ww = u[i] + k[i];
        let p = p_prev.max(ww);
        let e1 = exp_clamped(p_prev - p);
        let e2 = exp_clamped(ww - p);
        out[i] = (e1 * a + e2 * v[i]) / (e1 * b + e2);

        let ww = p_prev - w[i];
        let p = ww.max(k[i]);
        let e1 = exp_clamped(ww - p);
        let e2 = exp_clamped(k[i] - p);
        state.num[i] = e1 * a + e2 * v[i];
        state.den[i] = e1 * b + e2;
        state.max[i] = p;
    }
    Ok(Vector::from_raw(out))
}

#[inline]
fn site_input(
    block: usize,
    position: Position,
    mut x: Vec<f32>,
    thresholds: &ThresholdAssignment,
    taps: &mut dyn TapSink,
) -> Vec<f32> {
    let site = SiteId::new(block, position);
    apply_in_place(&mut x, thresholds.lambda(site));
    taps.tap(site, &x);
    x
}

fn linear(w: &Matrix, x: &[f32]) -> Result<Vec<f32>> {
    Ok(linear_forward(w, None, x, LinearMode::Event)?.0.into_inner())
}

/// Time-Mix sub-block for block `block`: returns the residual increment.
pub fn time_mix_forward(
    params: &TimeMixParams,
    block: usize,
    state: &mut BlockState,
    x: &[f32],
    thresholds: &ThresholdAssignment,
    taps: &mut dyn TapSink,
) -> Result<Vector> {
    let xr = token_shift_mix(x, &state.tm_prev, &params.mix_r)?.into_inner();
    let xk = token_shift_mix(x, &state.tm_prev, &params.mix_k)?.into_inner();
    let xv = token_shift_mix(x, &state.tm_prev, &params.mix_v)?.into_inner();

    let xr = site_input(block, Position::TmR, xr, thresholds, taps);
    let r = linear(&params.receptance, &xr)?;
    let xk = site_input(block, Position::TmK, xk, thresholds, taps);
    let k = linear(&params.key, &xk)?;
    let xv = site_input(block, Position::TmV, xv, thresholds, taps);
    let v = linear(&params.value, &xv)?;

    let wkv = wkv_step(&mut state.wkv, &k, &v, &params.decay, &params.bonus)?;
    let gated: Vec<f32> = r.iter().zip(wkv.iter()).map(|(&r, &w)| sigmoid(r) * w).collect();
    let gated = site_input(block, Position::TmOut, gated, thresholds, taps);
    let y = linear(&params.output, &gated)?;

    state.tm_prev.copy_from_slice(x);
    Ok(Vector::from_raw(y))
}

/// Channel-Mix sub-block for block `block`: returns the residual increment.
pub fn channel_mix_forward(
    params: &ChannelMixParams,
    block: usize,
    state: &mut BlockState,
    x: &[f32],
    thresholds: &ThresholdAssignment,
    taps: &mut dyn TapSink,
) -> Result<Vector> {
    let xr = token_shift_mix(x, &state.cm_prev, &params.mix_r)?.into_inner();
    let xk = token_shift_mix(x, &state.cm_prev, &params.mix_k)?.into_inner();

    let xr = site_input(block, Position::CmR, xr, thresholds, taps);
    let r = linear(&params.receptance, &xr)?;
    let xk = site_input(block, Position::CmK, xk, thresholds, taps);
    let mut hidden = linear(&params.key, &xk)?;
    for h in hidden.iter_mut() {
        *h = relu_squared(*h);
    }
    taps.tap(SiteId::new(block, Position::CmV), &hidden);
    let v = linear(&params.value, &hidden)?;

    state.cm_prev.copy_from_slice(x);
    Ok(Vector::from_raw(
        r.iter().zip(&v).map(|(&r, &v)| sigmoid(r) * v).collect(),
    ))
}

impl RwkvModel {
    /// Assembles a model, checking every shape against `config`.
    pub fn new(
        config: RwkvConfig,
        embedding: Matrix,
        ln_in: LayerNormParams,
        blocks: Vec<RwkvBlock>,
        ln_out: LayerNormParams,
        head: Matrix,
    ) -> Result<Self> {
        let model = Self {
            config,
            embedding,
            ln_in,
            blocks,
            ln_out,
            head,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d = c.d_model;
        let mat = |m: &Matrix, rows: usize, cols: usize, what: &'static str| {
            if m.rows() != rows || m.cols() != cols {
                Err(Error::DimensionMismatch {
                    context: what,
                    expected: rows * cols,
                    actual: m.rows() * m.cols(),
                })
            } else {
                ensure_finite(m.data(), what)
            }
        };
        let vector = |v: &[f32], what: &'static str| {
            if v.len() != d {
                Err(Error::DimensionMismatch {
                    context: what,
                    expected: d,
                    actual: v.len(),
                })
            } else {
                ensure_finite(v, what)
            }
        };
        let ln = |p: &LayerNormParams| {
            vector(&p.gamma, "layer norm")?;
            vector(&p.beta, "layer norm")
        };
        mat(&self.embedding, c.vocab_size, d, "embedding")?;
        mat(&self.head, c.vocab_size, d, "head")?;
        ln(&self.ln_in)?;
        ln(&self.ln_out)?;
        if self.blocks.len() != c.n_blocks {
            return Err(Error::DimensionMismatch {
                context: "block count",
                expected: c.n_blocks,
                actual: self.blocks.len(),
            });
        }
        for b in &self.blocks {
            ln(&b.ln1)?;
            ln(&b.ln2)?;
            let tm = &b.time_mix;
            for v in [&tm.mix_r, &tm.mix_k, &tm.mix_v, &tm.decay, &tm.bonus] {
                vector(v, "time mix vector")?;
            }
            for m in [&tm.receptance, &tm.key, &tm.value, &tm.output] {
                mat(m, d, d, "time mix weight")?;
            }
            let cm = &b.channel_mix;
            vector(&cm.mix_r, "channel mix vector")?;
            vector(&cm.mix_k, "channel mix vector")?;
            mat(&cm.receptance, d, d, "channel mix receptance")?;
            mat(&cm.key, 4 * d, d, "channel mix key")?;
            mat(&cm.value, d, 4 * d, "channel mix value")?;
        }
        Ok(())
    }

    pub fn config(&self) -> &RwkvConfig {
        &self.config
    }

    /// All-zero weights with identity layer norms.
    pub fn zeros(config: RwkvConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let blocks = (0..config.n_blocks)
            .map(|_| RwkvBlock {
                ln1: LayerNormParams::identity(d),
                ln2: LayerNormParams::identity(d),
                time_mix: TimeMixParams {
                    mix_r: vec![0.0; d],
                    mix_k: vec![0.0; d],
                    mix_v: vec![0.0; d],
                    decay: vec![0.0; d],
                    bonus: vec![0.0; d],
                    receptance: Matrix::zeros(d, d),
                    key: Matrix::zeros(d, d),
                    value: Matrix::zeros(d, d),
                    output: Matrix::zeros(d, d),
                },
                channel_mix: ChannelMixParams {
                    mix_r: vec![0.0; d],
                    mix_k: vec![0.0; d],
                    receptance: Matrix::zeros(d, d),
                    key: Matrix::zeros(4 * d, d),
                    value: Matrix::zeros(d, 4 * d),
                },
            })
            .collect();
        Ok(Self {
            config,
            embedding: Matrix::zeros(config.vocab_size, d),
            ln_in: LayerNormParams::identity(d),
            blocks,
            ln_out: LayerNormParams::identity(d),
            head: Matrix::zeros(config.vocab_size, d),
        })
    }

    /// Seeded random initialization suitable for training from scratch.
    ///
    /// Mix coefficients ramp across channels and deepen with block index,
    /// decays span `e^-5 ..= e^3`, as in the reference RWKV-4 initializer.
    pub fn random(config: RwkvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let n = config.n_blocks;
        let mut rng = rng::seeded(seed);
        let mut uniform = |rows: usize, cols: usize, scale: f32| {
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
        };
        let embedding = uniform(config.vocab_size, d, 0.5);
        let head = uniform(config.vocab_size, d, 0.5 / math::sqrtf(d as f32));
        let s_in = 1.0 / math::sqrtf(d as f32);
        let s_hidden = 1.0 / math::sqrtf((4 * d) as f32);
        let mut blocks = Vec::with_capacity(n);
        for b in 0..n {
            let ratio_0_to_1 = if n > 1 { b as f32 / (n - 1) as f32 } else { 0.0 };
            let ratio_1_to_0 = 1.0 - b as f32 / n as f32;
            let ramp = |i: usize| i as f32 / d as f32;
            let pow = |x: f32, e: f32| libm::powf(x, e);
            let mix_k: Vec<f32> = (0..d).map(|i| pow(ramp(i), ratio_1_to_0)).collect();
            let mix_v: Vec<f32> = mix_k
                .iter()
                .map(|m| (m + 0.3 * ratio_0_to_1).min(1.0))
                .collect();
            let mix_r: Vec<f32> = (0..d).map(|i| pow(ramp(i), 0.5 * ratio_1_to_0)).collect();
            let decay = (0..d)
                .map(|i| {
                    let h = if d > 1 { i as f32 / (d - 1) as f32 } else { 0.0 };
                    libm::expf(-5.0 + 8.0 * pow(h, 0.7 + 1.3 * ratio_0_to_1))
                })
                .collect();
            let bonus = (0..d)
                .map(|i| libm::logf(0.3) + (((i + 1) % 3) as f32 - 1.0) * 0.5)
                .collect();
            blocks.push(RwkvBlock {
                ln1: LayerNormParams::identity(d),
                ln2: LayerNormParams::identity(d),
                time_mix: TimeMixParams {
                    mix_r: mix_r.clone(),
                    mix_k: mix_k.clone(),
                    mix_v,
                    decay,
                    bonus,
                    receptance: uniform(d, d, s_in),
                    key: uniform(d, d, s_in),
                    value: uniform(d, d, s_in),
                    output: uniform(d, d, s_in),
                },
                channel_mix: ChannelMixParams {
                    mix_r,
                    mix_k,
                    receptance: uniform(d, d, s_in),
                    key: uniform(4 * d, d, s_in),
                    value: uniform(d, 4 * d, s_hidden),
                },
            });
        }
        Ok(Self {
            config,
            embedding,
            ln_in: LayerNormParams::identity(d),
            blocks,
            ln_out: LayerNormParams::identity(d),
            head,
        })
    }

    /// One token through the whole model.
    pub fn model_step(
        &self,
        state: &mut RecurrentState,
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
        if state.blocks.len() != c.n_blocks {
            return Err(Error::DimensionMismatch {
                context: "recurrent state",
                expected: c.n_blocks,
                actual: state.blocks.len(),
            });
        }
        let mut x = self
            .ln_in
            .forward(self.embedding.row(token as usize))?
            .into_inner();
        for (i, (block, bs)) in self.blocks.iter().zip(&mut state.blocks).enumerate() {
            let h = block.ln1.forward(&x)?;
            let dx = time_mix_forward(&block.time_mix, i, bs, &h, thresholds, taps)?;
            add_assign(&mut x, &dx);
            let h = block.ln2.forward(&x)?;
            let dx = channel_mix_forward(&block.channel_mix, i, bs, &h, thresholds, taps)?;
            add_assign(&mut x, &dx);
        }
        let h = self.ln_out.forward(&x)?;
        Ok(linear_forward(&self.head, None, &h, LinearMode::Dense)?.0)
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = vec![
            NamedTensor::matrix("emb.weight", &self.embedding),
            NamedTensor::vector("ln0.weight", &self.ln_in.gamma),
            NamedTensor::vector("ln0.bias", &self.ln_in.beta),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("blocks.{i}.{s}");
            let tm = &b.time_mix;
            let cm = &b.channel_mix;
            out.extend([
                NamedTensor::vector(p("ln1.weight"), &b.ln1.gamma),
                NamedTensor::vector(p("ln1.bias"), &b.ln1.beta),
                NamedTensor::vector(p("att.time_mix_r"), &tm.mix_r),
                NamedTensor::vector(p("att.time_mix_k"), &tm.mix_k),
                NamedTensor::vector(p("att.time_mix_v"), &tm.mix_v),
                NamedTensor::vector(p("att.decay"), &tm.decay),
                NamedTensor::vector(p("att.bonus"), &tm.bonus),
                NamedTensor::matrix(p("att.receptance.weight"), &tm.receptance),
                NamedTensor::matrix(p("att.key.weight"), &tm.key),
                NamedTensor::matrix(p("att.value.weight"), &tm.value),
                NamedTensor::matrix(p("att.output.weight"), &tm.output),
                NamedTensor::vector(p("ln2.weight"), &b.ln2.gamma),
                NamedTensor::vector(p("ln2.bias"), &b.ln2.beta),
                NamedTensor::vector(p("ffn.time_mix_r"), &cm.mix_r),
                NamedTensor::vector(p("ffn.time_mix_k"), &cm.mix_k),
                NamedTensor::matrix(p("ffn.receptance.weight"), &cm.receptance),
                NamedTensor::matrix(p("ffn.key.weight"), &cm.key),
                NamedTensor::matrix(p("ffn.value.weight"), &cm.value),
            ]);
        }
        out.extend([
            NamedTensor::vector("ln_out.weight", &self.ln_out.gamma),
            NamedTensor::vector("ln_out.bias", &self.ln_out.beta),
            NamedTensor::matrix("head.weight", &self.head),
        ]);
        out
    }

    pub fn from_tensors(config: RwkvConfig, mut t: TensorSet) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let v = config.vocab_size;
        let ln = |t: &mut TensorSet, prefix: &str| -> Result<LayerNormParams> {
            Ok(LayerNormParams {
                gamma: t.take_vector(&format!("{prefix}.weight"), d)?,
                beta: t.take_vector(&format!("{prefix}.bias"), d)?,
            })
        };
        let embedding = t.take_matrix("emb.weight", v, d)?;
        let ln_in = ln(&mut t, "ln0")?;
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let p = |s: &str| format!("blocks.{i}.{s}");
            let ln1 = ln(&mut t, &p("ln1"))?;
            let time_mix = TimeMixParams {
                mix_r: t.take_vector(&p("att.time_mix_r"), d)?,
                mix_k: t.take_vector(&p("att.time_mix_k"), d)?,
                mix_v: t.take_vector(&p("att.time_mix_v"), d)?,
                decay: t.take_vector(&p("att.decay"), d)?,
                bonus: t.take_vector(&p("att.bonus"), d)?,
                receptance: t.take_matrix(&p("att.receptance.weight"), d, d)?,
                key: t.take_matrix(&p("att.key.weight"), d, d)?,
                value: t.take_matrix(&p("att.value.weight"), d, d)?,
                output: t.take_matrix(&p("att.output.weight"), d, d)?,
            };
            let ln2 = ln(&mut t, &p("ln2"))?;
            let channel_mix = ChannelMixParams {
                mix_r: t.take_vector(&p("ffn.time_mix_r"), d)?,
                mix_k: t.take_vector(&p("ffn.time_mix_k"), d)?,
                receptance: t.take_matrix(&p("ffn.receptance.weight"), d, d)?,
                key: t.take_matrix(&p("ffn.key.weight"), 4 * d, d)?,
                value: t.take_matrix(&p("ffn.value.weight"), d, 4 * d)?,
            };
            blocks.push(RwkvBlock {
                ln1,
                time_mix,
                ln2,
                channel_mix,
            });
        }
        let ln_out = ln(&mut t, "ln_out")?;
        let head = t.take_matrix("head.weight", v, d)?;
        t.finish()?;
        Self::new(config, embedding, ln_in, blocks, ln_out, head)
    }
}

fn add_assign(x: &mut [f32], dx: &[f32]) {
    for (a, b) in x.iter_mut().zip(dx) {
        *a += b;
    }
}

impl SparseLm for RwkvModel {
    type State = RecurrentState;

    fn arch(&self) -> Arch {
        Arch::Rwkv
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn n_blocks(&self) -> usize {
        self.config.n_blocks
    }

    fn threshold_sites(&self) -> Vec<ThresholdSite> {
        let d = self.config.d_model;
        (0..self.config.n_blocks)
            .flat_map(|block| {
                Arch::Rwkv
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
                Arch::Rwkv
                    .measured_positions()
                    .iter()
                    .map(move |&position| {
                        let input_dim = if position == Position::CmV { 4 * d } else { d };
                        MeasuredSite {
                            id: SiteId::new(block, position),
                            input_dim,
                            weight: input_dim,
                            thresholded: position.is_thresholded(),
                        }
                    })
            })
            .collect()
    }

    fn fresh_state(&self) -> RecurrentState {
        RecurrentState::new(&self.config)
    }

    fn step(
        &self,
        state: &mut RecurrentState,
        token: u32,
        thresholds: &ThresholdAssignment,
        taps: &mut dyn TapSink,
    ) -> Result<Vector> {
        self.model_step(state, token, thresholds, taps)
    }
}

/// Mean next-token NLL of one document, from a fresh state.
pub fn sequence_nll<M: SparseLm + ?Sized>(
    model: &M,
    tokens: &[u32],
    thresholds: &ThresholdAssignment,
) -> Result<f64> {
    let (sum, count) = document_nll(model, tokens, thresholds, &mut crate::backend::NoTaps)?;
    Ok(sum / count as f64)
}
