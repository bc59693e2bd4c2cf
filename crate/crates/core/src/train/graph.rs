// SPDX-License-Identifier: MIT OR Apache-2.0

//! Differentiable forward passes of both backends over a whole sequence.
//!
//! These mirror [`crate::rwkv`] and [`crate::transformer`] operation for
//! operation, in `f64` and without thresholds. The WKV recurrence is written
//! in its direct (unstabilized) form, which is safe in `f64` with clamped
//! exponents.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rwkv::{RwkvConfig, LAYER_NORM_EPS};
use crate::transformer::TransformerConfig;

#[derive(Debug, Clone, Copy)]
struct Ln {
    gamma: usize,
    beta: usize,
}

impl Ln {
    fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            gamma: store.id(&format!("{prefix}.weight"))?,
            beta: store.id(&format!("{prefix}.bias"))?,
        })
    }

    fn bind(&self, tape: &mut Tape<'_>) -> (Var, Var) {
        (tape.param(self.gamma), tape.param(self.beta))
    }
}

#[derive(Debug, Clone)]
struct RwkvBlockIds {
    ln1: Ln,
    ln2: Ln,
    tm_mix: [usize; 3],
    decay: usize,
    bonus: usize,
    tm_w: [usize; 4],
    cm_mix: [usize; 2],
    cm_w: [usize; 3],
}

#[derive(Debug, Clone)]
struct TransformerBlockIds {
    ln1: Ln,
    ln2: Ln,
    qkv: usize,
    out: usize,
    up: usize,
    down: usize,
}

/// Parameter ids of one model architecture inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Graph(Inner);

#[derive(Debug, Clone)]
enum Inner {
    Rwkv {
        config: RwkvConfig,
        emb: usize,
        ln0: Ln,
        blocks: Vec<RwkvBlockIds>,
        ln_out: Ln,
        head: usize,
    },
    Transformer {
        config: TransformerConfig,
        emb: usize,
        pos: usize,
        blocks: Vec<TransformerBlockIds>,
        ln_out: Ln,
        head: usize,
    },
}

impl Graph {
    pub fn rwkv(config: RwkvConfig, store: &ParamStore) -> Result<Self> {
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let id = |s: &str| store.id(&format!("blocks.{i}.{s}"));
            blocks.push(RwkvBlockIds {
                ln1: Ln::find(store, &format!("blocks.{i}.ln1"))?,
                ln2: Ln::find(store, &format!("blocks.{i}.ln2"))?,
                tm_mix: [
                    id("att.time_mix_r")?,
                    id("att.time_mix_k")?,
                    id("att.time_mix_v")?,
                ],
                decay: id("att.decay")?,
                bonus: id("att.bonus")?,
                tm_w: [
                    id("att.receptance.weight")?,
                    id("att.key.weight")?,
                    id("att.value.weight")?,
                    id("att.output.weight")?,
                ],
                cm_mix: [id("ffn.time_mix_r")?, id("ffn.time_mix_k")?],
                cm_w: [
                    id("ffn.receptance.weight")?,
                    id("ffn.key.weight")?,
                    id("ffn.value.weight")?,
                ],
            });
        }
        Ok(Self(Inner::Rwkv {
            config,
            emb: store.id("emb.weight")?,
            ln0: Ln::find(store, "ln0")?,
            blocks,
            ln_out: Ln::find(store, "ln_out")?,
            head: store.id("head.weight")?,
        }))
    }

    pub fn transformer(config: TransformerConfig, store: &ParamStore) -> Result<Self> {
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let id = |s: &str| store.id(&format!("blocks.{i}.{s}"));
            blocks.push(TransformerBlockIds {
                ln1: Ln::find(store, &format!("blocks.{i}.ln1"))?,
                ln2: Ln::find(store, &format!("blocks.{i}.ln2"))?,
                qkv: id("attn.qkv.weight")?,
                out: id("attn.out.weight")?,
                up: id("ffn.up.weight")?,
                down: id("ffn.down.weight")?,
            });
        }
        Ok(Self(Inner::Transformer {
            config,
            emb: store.id("emb.weight")?,
            pos: store.id("pos.weight")?,
            blocks,
            ln_out: Ln::find(store, "ln_out")?,
            head: store.id("head.weight")?,
        }))
    }

    /// Longest token window the graph accepts (inputs plus final target).
    pub fn max_window(&self) -> Option<usize> {
        match &self.0 {
            Inner::Rwkv { .. } => None,
            Inner::Transformer { config, .. } => Some(config.max_positions + 1),
        }
    }

    /// Records the mean next-token NLL of `tokens` onto `tape`. Positions
    /// `0..len-1` are inputs and each is scored against its successor.
    pub fn sequence_loss(&self, tape: &mut Tape<'_>, tokens: &[u32]) -> Result<Var> {
        if tokens.len() < 2 {
            return Err(Error::Empty("training window needs at least two tokens"));
        }
        if let Some(max) = self.max_window() {
            if tokens.len() > max {
                return Err(Error::SequenceTooLong {
                    position: tokens.len() - 1,
                    limit: max - 1,
                });
            }
        }
        match &self.0 {
            Inner::Rwkv {
                config,
                emb,
                ln0,
                blocks,
                ln_out,
                head,
            } => rwkv_loss(tape, config, *emb, *ln0, blocks, *ln_out, *head, tokens),
            Inner::Transformer {
                config,
                emb,
                pos,
                blocks,
                ln_out,
                head,
            } => transformer_loss(tape, config, *emb, *pos, blocks, *ln_out, *head, tokens),
        }
    }
}

fn ln(tape: &mut Tape<'_>, x: Var, p: (Var, Var)) -> Result<Var> {
    tape.layer_norm(x, p.0, p.1, f64::from(LAYER_NORM_EPS))
}

/// `prev + μ ⊙ (x − prev)`, equal to `μ ⊙ x + (1 − μ) ⊙ prev`.
fn shift(tape: &mut Tape<'_>, x: Var, prev: Var, mu: Var) -> Result<Var> {
    let diff = tape.sub(x, prev)?;
    let scaled = tape.mul(mu, diff)?;
    tape.add(prev, scaled)
}

fn check_token(token: u32, vocab: usize) -> Result<usize> {
    if token as usize >= vocab {
        return Err(Error::TokenOutOfRange { token, vocab });
    }
    Ok(token as usize)
}

#[allow(clippy::too_many_arguments)]
fn rwkv_loss(
    tape: &mut Tape<'_>,
    config: &RwkvConfig,
    emb: usize,
    ln0: Ln,
    blocks: &[RwkvBlockIds],
    ln_out: Ln,
    head: usize,
    tokens: &[u32],
) -> Result<Var> {
    let d = config.d_model;
    struct Bound {
        ln1: (Var, Var),
        ln2: (Var, Var),
        tm_mix: [Var; 3],
        decay: Var,
        bonus: Var,
        cm_mix: [Var; 2],
    }
    struct State {
        tm_prev: Var,
        cm_prev: Var,
        num: Var,
        den: Var,
    }
    let ln0 = ln0.bind(tape);
    let ln_out_p = ln_out.bind(tape);
    let bound: Vec<Bound> = blocks
        .iter()
        .map(|b| {
            let decay = tape.param(b.decay);
            let neg = tape.neg(decay);
            Bound {
                ln1: b.ln1.bind(tape),
                ln2: b.ln2.bind(tape),
                tm_mix: b.tm_mix.map(|id| tape.param(id)),
                decay: tape.exp(neg),
                bonus: tape.param(b.bonus),
                cm_mix: b.cm_mix.map(|id| tape.param(id)),
            }
        })
        .collect();
    let zero = tape.constant(vec![0.0; d]);
    let mut states: Vec<State> = blocks
        .iter()
        .map(|_| State {
            tm_prev: zero,
            cm_prev: zero,
            num: zero,
            den: zero,
        })
        .collect();

    let mut losses = Vec::with_capacity(tokens.len() - 1);
    for t in 0..tokens.len() - 1 {
        let e = tape.row(emb, check_token(tokens[t], config.vocab_size)?)?;
        let mut x = ln(tape, e, ln0)?;
        for ((ids, b), st) in blocks.iter().zip(&bound).zip(&mut states) {
            let h = ln(tape, x, b.ln1)?;
            let xr = shift(tape, h, st.tm_prev, b.tm_mix[0])?;
            let xk = shift(tape, h, st.tm_prev, b.tm_mix[1])?;
            let xv = shift(tape, h, st.tm_prev, b.tm_mix[2])?;
            let r = tape.matvec(ids.tm_w[0], xr)?;
            let k = tape.matvec(ids.tm_w[1], xk)?;
            let v = tape.matvec(ids.tm_w[2], xv)?;
            let uk = tape.add(b.bonus, k)?;
            let euk = tape.exp(uk);
            let ek = tape.exp(k);
            let euk_v = tape.mul(euk, v)?;
            let num = tape.add(st.num, euk_v)?;
            let den = tape.add(st.den, euk)?;
            let wkv = tape.div(num, den)?;
            let ek_v = tape.mul(ek, v)?;
            let decayed_num = tape.mul(b.decay, st.num)?;
            let decayed_den = tape.mul(b.decay, st.den)?;
            st.num = tape.add(decayed_num, ek_v)?;
            st.den = tape.add(decayed_den, ek)?;
            let sr = tape.sigmoid(r);
            let gated = tape.mul(sr, wkv)?;
            let dx = tape.matvec(ids.tm_w[3], gated)?;
            st.tm_prev = h;
            x = tape.add(x, dx)?;

            let h = ln(tape, x, b.ln2)?;
            let xr = shift(tape, h, st.cm_prev, b.cm_mix[0])?;
            let xk = shift(tape, h, st.cm_prev, b.cm_mix[1])?;
            let r = tape.matvec(ids.cm_w[0], xr)?;
            let pre = tape.matvec(ids.cm_w[1], xk)?;
            let hidden = tape.relu_sq(pre);
            let v = tape.matvec(ids.cm_w[2], hidden)?;
            let sr = tape.sigmoid(r);
            let dx = tape.mul(sr, v)?;
            st.cm_prev = h;
            x = tape.add(x, dx)?;
        }
        let h = ln(tape, x, ln_out_p)?;
        let logits = tape.matvec(head, h)?;
        let target = check_token(tokens[t + 1], config.vocab_size)?;
        losses.push(tape.cross_entropy(logits, target)?);
    }
    tape.mean(&losses)
}

#[allow(clippy::too_many_arguments)]
fn transformer_loss(
    tape: &mut Tape<'_>,
    config: &TransformerConfig,
    emb: usize,
    pos: usize,
    blocks: &[TransformerBlockIds],
    ln_out: Ln,
    head: usize,
    tokens: &[u32],
) -> Result<Var> {
    let d = config.d_model;
    let ln_out_p = ln_out.bind(tape);
    let bound: Vec<((Var, Var), (Var, Var))> =
        blocks.iter().map(|b| (b.ln1.bind(tape), b.ln2.bind(tape))).collect();
    let mut keys: Vec<Vec<Var>> = vec![Vec::new(); blocks.len()];
    let mut values: Vec<Vec<Var>> = vec![Vec::new(); blocks.len()];
    let mut losses = Vec::with_capacity(tokens.len() - 1);
    for t in 0..tokens.len() - 1 {
        let e = tape.row(emb, check_token(tokens[t], config.vocab_size)?)?;
        let p = tape.row(pos, t)?;
        let mut x = tape.add(e, p)?;
        for (i, (ids, (ln1, ln2))) in blocks.iter().zip(&bound).enumerate() {
            let h = ln(tape, x, *ln1)?;
            let qkv = tape.matvec(ids.qkv, h)?;
            let q = tape.slice(qkv, 0, d)?;
            keys[i].push(tape.slice(qkv, d, d)?);
            values[i].push(tape.slice(qkv, 2 * d, d)?);
            let a = tape.attention(q, &keys[i], &values[i], config.n_heads)?;
            let dx = tape.matvec(ids.out, a)?;
            x = tape.add(x, dx)?;

            let h = ln(tape, x, *ln2)?;
            let pre = tape.matvec(ids.up, h)?;
            let hidden = tape.relu(pre);
            let dx = tape.matvec(ids.down, hidden)?;
            x = tape.add(x, dx)?;
        }
        let h = ln(tape, x, ln_out_p)?;
        let logits = tape.matvec(head, h)?;
        let target = check_token(tokens[t + 1], config.vocab_size)?;
        losses.push(tape.cross_entropy(logits, target)?);
    }
    tape.mean(&losses)
}

/// Mean NLL of `tokens` and its gradient for every stored tensor.
pub fn loss_and_grad(graph: &Graph, store: &ParamStore, tokens: &[u32]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new(store);
    let out = graph.sequence_loss(&mut tape, tokens)?;
    Ok((tape.value(out)[0], tape.backward(out)))
}

/// Mean NLL of `tokens` evaluated in `f64`.
pub fn loss(graph: &Graph, store: &ParamStore, tokens: &[u32]) -> Result<f64> {
    let mut tape = Tape::new(store);
    let out = graph.sequence_loss(&mut tape, tokens)?;
    Ok(tape.value(out)[0])
}
