// SPDX-License-Identifier: MIT OR Apache-2.0

// Independent f64 references. They read raw tensors by name and share no
// code with the library's forward paths.

#![allow(dead_code)]

use std::collections::HashMap;

use srlm_core::tensors::NamedTensor;

pub struct Weights(HashMap<String, (Vec<usize>, Vec<f64>)>);

impl Weights {
    pub fn new(tensors: &[NamedTensor]) -> Self {
        Self(
            tensors
                .iter()
                .map(|t| {
                    (
                        t.name.clone(),
                        (t.shape.clone(), t.data.iter().map(|&v| v as f64).collect()),
                    )
                })
                .collect(),
        )
    }

    pub fn vec(&self, name: &str) -> &[f64] {
        &self.0[name].1
    }

    pub fn matvec(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let (shape, data) = &self.0[name];
        let cols = shape[1];
        assert_eq!(cols, x.len(), "{name}");
        data.chunks(cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn row(&self, name: &str, r: usize) -> &[f64] {
        let (shape, data) = &self.0[name];
        &data[r * shape[1]..(r + 1) * shape[1]]
    }
}

pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .zip(g.iter().zip(b))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn mix(now: &[f64], prev: &[f64], mu: &[f64]) -> Vec<f64> {
    now.iter()
        .zip(prev)
        .zip(mu)
        .map(|((a, b), m)| m * a + (1.0 - m) * b)
        .collect()
}

/// Direct WKV: keeps every past (k, v) and evaluates the weighted sum
/// from scratch each step, without any max-shift.
pub fn wkv_direct(ks: &[Vec<f64>], vs: &[Vec<f64>], w: &[f64], u: &[f64]) -> Vec<Vec<f64>> {
    let d = w.len();
    (0..ks.len())
        .map(|t| {
            (0..d)
                .map(|c| {
                    let mut num = (u[c] + ks[t][c]).exp() * vs[t][c];
                    let mut den = (u[c] + ks[t][c]).exp();
                    for i in 0..t {
                        let e = (-((t - 1 - i) as f64) * w[c] + ks[i][c]).exp();
                        num += e * vs[i][c];
                        den += e;
                    }
                    num / den
                })
                .collect()
        })
        .collect()
}

/// Logits of an RWKV model after each token of `tokens`.
pub fn rwkv_logits(w: &Weights, n_blocks: usize, tokens: &[u32]) -> Vec<Vec<f64>> {
    let mut tm_prev: Vec<Vec<f64>> = Vec::new();
    let mut cm_prev: Vec<Vec<f64>> = Vec::new();
    let mut ks: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_blocks];
    let mut vs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_blocks];
    let mut out = Vec::new();
    for &tok in tokens {
        let emb = w.row("emb.weight", tok as usize).to_vec();
        let d = emb.len();
        if tm_prev.is_empty() {
            tm_prev = vec![vec![0.0; d]; n_blocks];
            cm_prev = vec![vec![0.0; d]; n_blocks];
        }
        let mut x = layer_norm(&emb, w.vec("ln0.weight"), w.vec("ln0.bias"));
        for b in 0..n_blocks {
            let p = |s: &str| format!("blocks.{b}.{s}");
            let h = layer_norm(&x, w.vec(&p("ln1.weight")), w.vec(&p("ln1.bias")));
            let r = w.matvec(&p("att.receptance.weight"), &mix(&h, &tm_prev[b], w.vec(&p("att.time_mix_r"))));
            let k = w.matvec(&p("att.key.weight"), &mix(&h, &tm_prev[b], w.vec(&p("att.time_mix_k"))));
            let v = w.matvec(&p("att.value.weight"), &mix(&h, &tm_prev[b], w.vec(&p("att.time_mix_v"))));
            ks[b].push(k);
            vs[b].push(v);
            let wkv = wkv_direct(&ks[b], &vs[b], w.vec(&p("att.decay")), w.vec(&p("att.bonus")));
            let wkv = wkv.last().unwrap();
            let gated: Vec<f64> = r.iter().zip(wkv).map(|(r, v)| sigmoid(*r) * v).collect();
            let dx = w.matvec(&p("att.output.weight"), &gated);
            tm_prev[b] = h;
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);

            let h = layer_norm(&x, w.vec(&p("ln2.weight")), w.vec(&p("ln2.bias")));
            let r = w.matvec(&p("ffn.receptance.weight"), &mix(&h, &cm_prev[b], w.vec(&p("ffn.time_mix_r"))));
            let hidden: Vec<f64> = w
                .matvec(&p("ffn.key.weight"), &mix(&h, &cm_prev[b], w.vec(&p("ffn.time_mix_k"))))
                .into_iter()
                .map(|v| v.max(0.0).powi(2))
                .collect();
            let v = w.matvec(&p("ffn.value.weight"), &hidden);
            cm_prev[b] = h;
            x.iter_mut()
                .zip(r.iter().zip(&v))
                .for_each(|(a, (r, v))| *a += sigmoid(*r) * v);
        }
        let h = layer_norm(&x, w.vec("ln_out.weight"), w.vec("ln_out.bias"));
        out.push(w.matvec("head.weight", &h));
    }
    out
}

/// Logits of a transformer decoder after each token of `tokens`.
pub fn transformer_logits(w: &Weights, n_blocks: usize, n_heads: usize, tokens: &[u32]) -> Vec<Vec<f64>> {
    let mut keys: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_blocks];
    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_blocks];
    let mut out = Vec::new();
    for (pos, &tok) in tokens.iter().enumerate() {
        let mut x: Vec<f64> = w
            .row("emb.weight", tok as usize)
            .iter()
            .zip(w.row("pos.weight", pos))
            .map(|(a, b)| a + b)
            .collect();
        let d = x.len();
        let hd = d / n_heads;
        for b in 0..n_blocks {
            let p = |s: &str| format!("blocks.{b}.{s}");
            let h = layer_norm(&x, w.vec(&p("ln1.weight")), w.vec(&p("ln1.bias")));
            let qkv = w.matvec(&p("attn.qkv.weight"), &h);
            keys[b].push(qkv[d..2 * d].to_vec());
            values[b].push(qkv[2 * d..].to_vec());
            let mut attn = vec![0.0; d];
            for head in 0..n_heads {
                let span = head * hd..(head + 1) * hd;
                let scores: Vec<f64> = keys[b]
                    .iter()
                    .map(|k| {
                        qkv[span.clone()].iter().zip(&k[span.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                for (s, v) in scores.iter().zip(&values[b]) {
                    for c in span.clone() {
                        attn[c] += s.exp() / z * v[c];
                    }
                }
            }
            let dx = w.matvec(&p("attn.out.weight"), &attn);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            let h = layer_norm(&x, w.vec(&p("ln2.weight")), w.vec(&p("ln2.bias")));
            let hidden: Vec<f64> = w.matvec(&p("ffn.up.weight"), &h).into_iter().map(|v| v.max(0.0)).collect();
            let dx = w.matvec(&p("ffn.down.weight"), &hidden);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
        let h = layer_norm(&x, w.vec("ln_out.weight"), w.vec("ln_out.bias"));
        out.push(w.matvec("head.weight", &h));
    }
    out
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs() / scale))
}
