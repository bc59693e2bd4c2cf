// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reverse-mode automatic differentiation over `f64` vectors.
//!
//! A [`Tape`] records one forward pass as a list of vector-valued nodes.
//! Parameters live in a [`ParamStore`] that the tape borrows; calling
//! [`Tape::backward`] on a scalar node returns gradients for every stored
//! tensor.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, EXP_CLAMP};
use crate::tensors::NamedTensor;

/// Parameter tensors in `f64`, in the order they were supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    original: Vec<Vec<usize>>,
    pub data: Vec<Vec<f64>>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    /// Vectors are stored as `n × 1`.
    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let mut store = Self {
            names: Vec::new(),
            shapes: Vec::new(),
            original: Vec::new(),
            data: Vec::new(),
            index: BTreeMap::new(),
        };
        for t in tensors {
            let shape = match t.shape[..] {
                [n] => (n, 1),
                [r, c] => (r, c),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "tensor {} has unsupported rank {}",
                        t.name,
                        t.shape.len()
                    )))
                }
            };
            store.index.insert(t.name.clone(), store.names.len());
            store.names.push(t.name.clone());
            store.shapes.push(shape);
            store.original.push(t.shape.clone());
            store.data.push(t.data.iter().map(|&v| f64::from(v)).collect());
        }
        Ok(store)
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.original)
            .zip(&self.data)
            .map(|((name, shape), data)| NamedTensor {
                name: name.clone(),
                shape: shape.clone(),
                data: data.iter().map(|&v| v as f32).collect(),
            })
            .collect()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownSite(format!("no parameter named {name}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn shape(&self, id: usize) -> (usize, usize) {
        self.shapes[id]
    }

    pub fn numel(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    /// Zero gradients shaped like the store.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.data.iter().map(|d| vec![0.0; d.len()]).collect()
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for d in &mut self.data {
            for v in d.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }
}

pub type Var = usize;

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(usize),
    Row(usize, usize),
    MatVec(usize, Var),
    Slice(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Sigmoid(Var),
    Relu(Var),
    ReluSq(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: f64,
    },
    Attention {
        q: Var,
        keys: Vec<Var>,
        values: Vec<Var>,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Mean(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// One recorded forward pass.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    fn check_len(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        let (la, lb) = (self.nodes[a].value.len(), self.nodes[b].value.len());
        if la != lb {
            return Err(Error::DimensionMismatch {
                context,
                expected: la,
                actual: lb,
            });
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Const)
    }

    /// A whole tensor as a flat vector.
    pub fn param(&mut self, id: usize) -> Var {
        let value = self.params.data[id].clone();
        self.push(value, Op::Param(id))
    }

    /// Row `r` of a matrix parameter.
    pub fn row(&mut self, id: usize, r: usize) -> Result<Var> {
        let (rows, cols) = self.params.shapes[id];
        if r >= rows {
            return Err(Error::DimensionMismatch {
                context: "parameter row",
                expected: rows,
                actual: r,
            });
        }
        let value = self.params.data[id][r * cols..(r + 1) * cols].to_vec();
        Ok(self.push(value, Op::Row(id, r)))
    }

    /// `W · x` with `W` a stored matrix.
    pub fn matvec(&mut self, id: usize, x: Var) -> Result<Var> {
        let (rows, cols) = self.params.shapes[id];
        let xv = &self.nodes[x].value;
        if xv.len() != cols {
            return Err(Error::DimensionMismatch {
                context: "matvec",
                expected: cols,
                actual: xv.len(),
            });
        }
        let w = &self.params.data[id];
        let value = (0..rows)
            .map(|i| {
                let row = &w[i * cols..(i + 1) * cols];
                row.iter().zip(xv).map(|(a, b)| a * b).sum()
            })
            .collect();
        Ok(self.push(value, Op::MatVec(id, x)))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = &self.nodes[x].value;
        if start + len > xv.len() {
            return Err(Error::DimensionMismatch {
                context: "slice",
                expected: xv.len(),
                actual: start + len,
            });
        }
        let value = xv[start..start + len].to_vec();
        Ok(self.push(value, Op::Slice(x, start)))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.check_len(a, b, "elementwise")?;
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x].value.iter().map(|&v| f(v)).collect();
        self.push(value, op)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    /// `exp` of the argument clamped to `[-30, 30]`.
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, math::exp_clamped_f64, Op::Exp(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + math::exp(-v)), Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn relu_sq(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                let r = v.max(0.0);
                r * r
            },
            Op::ReluSq(x),
        )
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.check_len(x, gamma, "layer norm")?;
        self.check_len(x, beta, "layer norm")?;
        let xv = &self.nodes[x].value;
        let n = xv.len() as f64;
        let mean = xv.iter().sum::<f64>() / n;
        let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / math::sqrt(var + eps);
        let xhat: Vec<f64> = xv.iter().map(|v| (v - mean) * inv_std).collect();
        let value = xhat
            .iter()
            .zip(&self.nodes[gamma].value)
            .zip(&self.nodes[beta].value)
            .map(|((h, g), b)| h * g + b)
            .collect();
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Causal multi-head attention of `q` over `keys` / `values`.
    pub fn attention(&mut self, q: Var, keys: &[Var], values: &[Var], heads: usize) -> Result<Var> {
        let d = self.nodes[q].value.len();
        if heads == 0 || d % heads != 0 || keys.len() != values.len() || keys.is_empty() {
            return Err(Error::InvalidConfig("attention shapes".into()));
        }
        for (&k, &v) in keys.iter().zip(values) {
            self.check_len(q, k, "attention key")?;
            self.check_len(q, v, "attention value")?;
        }
        let hd = d / heads;
        let n = keys.len();
        let scale = 1.0 / math::sqrt(hd as f64);
        let qv = &self.nodes[q].value;
        let mut probs = vec![0.0; heads * n];
        let mut out = vec![0.0; d];
        for h in 0..heads {
            let span = h * hd..(h + 1) * hd;
            let p = &mut probs[h * n..(h + 1) * n];
            for (j, &k) in keys.iter().enumerate() {
                let kv = &self.nodes[k].value[span.clone()];
                p[j] = qv[span.clone()].iter().zip(kv).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let max = p.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
            let mut total = 0.0;
            for s in p.iter_mut() {
                *s = math::exp_clamped_f64(*s - max);
                total += *s;
            }
            for s in p.iter_mut() {
                *s /= total;
            }
            for (j, &v) in values.iter().enumerate() {
                let vv = &self.nodes[v].value[span.clone()];
                for (o, x) in out[span.clone()].iter_mut().zip(vv) {
                    *o += p[j] * x;
                }
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                keys: keys.to_vec(),
                values: values.to_vec(),
                heads,
                probs,
            },
        ))
    }

    /// `−log softmax(logits)[target]` as a 1-element node.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let l = &self.nodes[logits].value;
        if target >= l.len() {
            return Err(Error::TokenOutOfRange {
                token: target as u32,
                vocab: l.len(),
            });
        }
        let max = l.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut probs: Vec<f64> = l.iter().map(|v| math::exp(v - max)).collect();
        let total: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= total;
        }
        let nll = math::ln(total) + max - l[target];
        Ok(self.push(
            vec![nll],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Mean of 1-element nodes.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let s: f64 = xs.iter().map(|&x| self.nodes[x].value[0]).sum();
        Ok(self.push(vec![s / xs.len() as f64], Op::Mean(xs.to_vec())))
    }

    /// Gradients of the scalar `out` with respect to every stored tensor.
    pub fn backward(&self, out: Var) -> Vec<Vec<f64>> {
        let mut pgrad = self.params.zeros_like();
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[out] = vec![1.0; self.nodes[out].value.len()];
        fn acc(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
            if grads[v].is_empty() {
                grads[v] = vec![0.0; len];
            }
            &mut grads[v]
        }
        for i in (0..=out).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = core::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            let len_of = |v: Var| self.nodes[v].value.len();
            match &node.op {
                Op::Const => {}
                Op::Param(id) => {
                    for (p, gi) in pgrad[*id].iter_mut().zip(&g) {
                        *p += gi;
                    }
                }
                Op::Row(id, r) => {
                    let cols = self.params.shapes[*id].1;
                    for (p, gi) in pgrad[*id][r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                        *p += gi;
                    }
                }
                Op::MatVec(id, x) => {
                    let (rows, cols) = self.params.shapes[*id];
                    let w = &self.params.data[*id];
                    let xv = &self.nodes[*x].value;
                    let gw = &mut pgrad[*id];
                    let gx = acc(&mut grads, *x, cols);
                    for r in 0..rows {
                        let gy = g[r];
                        if gy == 0.0 {
                            continue;
                        }
                        let row = &w[r * cols..(r + 1) * cols];
                        let grow = &mut gw[r * cols..(r + 1) * cols];
                        for ((gxj, gwj), (wj, xj)) in
                            gx.iter_mut().zip(grow.iter_mut()).zip(row.iter().zip(xv))
                        {
                            *gxj += gy * wj;
                            *gwj += gy * xj;
                        }
                    }
                }
                Op::Slice(x, start) => {
                    let gx = acc(&mut grads, *x, len_of(*x));
                    for (a, b) in gx[*start..*start + g.len()].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    for (x, gi) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *x += gi;
                    }
                    for (x, gi) in acc(&mut grads, *b, g.len()).iter_mut().zip(&g) {
                        *x += sign * gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    add_into(acc(&mut grads, *a, g.len()), &ga);
                    add_into(acc(&mut grads, *b, g.len()), &gb);
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[*b].value;
                    let y = &node.value;
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g / b).collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(bv.iter().zip(y))
                        .map(|(g, (b, y))| -g * y / b)
                        .collect();
                    add_into(acc(&mut grads, *a, g.len()), &ga);
                    add_into(acc(&mut grads, *b, g.len()), &gb);
                }
                Op::Neg(x) => {
                    for (a, gi) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                        *a -= gi;
                    }
                }
                Op::Exp(x) => {
                    let xv = &self.nodes[*x].value;
                    let local: Vec<f64> = g
                        .iter()
                        .zip(xv.iter().zip(&node.value))
                        .map(|(g, (x, y))| {
                            if x.abs() <= f64::from(EXP_CLAMP) {
                                g * y
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    add_into(acc(&mut grads, *x, g.len()), &local);
                }
                Op::Sigmoid(x) => {
                    let local: Vec<f64> =
                        g.iter().zip(&node.value).map(|(g, s)| g * s * (1.0 - s)).collect();
                    add_into(acc(&mut grads, *x, g.len()), &local);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[*x].value;
                    let local: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    add_into(acc(&mut grads, *x, g.len()), &local);
                }
                Op::ReluSq(x) => {
                    let xv = &self.nodes[*x].value;
                    let local: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(g, x)| if *x > 0.0 { 2.0 * g * x } else { 0.0 })
                        .collect();
                    add_into(acc(&mut grads, *x, g.len()), &local);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = &self.nodes[*gamma].value;
                    let n = g.len() as f64;
                    let gh: Vec<f64> = g.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let sum_gh: f64 = gh.iter().sum();
                    let sum_ghx: f64 = gh.iter().zip(xhat).map(|(a, b)| a * b).sum();
                    let gx: Vec<f64> = gh
                        .iter()
                        .zip(xhat)
                        .map(|(h, xh)| inv_std / n * (n * h - sum_gh - xh * sum_ghx))
                        .collect();
                    let gg: Vec<f64> = g.iter().zip(xhat).map(|(a, b)| a * b).collect();
                    add_into(acc(&mut grads, *x, g.len()), &gx);
                    add_into(acc(&mut grads, *gamma, g.len()), &gg);
                    add_into(acc(&mut grads, *beta, g.len()), &g);
                }
                Op::Attention {
                    q,
                    keys,
                    values,
                    heads,
                    probs,
                } => {
                    let d = g.len();
                    let hd = d / heads;
                    let n = keys.len();
                    let scale = 1.0 / math::sqrt(hd as f64);
                    let qv = self.nodes[*q].value.clone();
                    let mut gq = vec![0.0; d];
                    for h in 0..*heads {
                        let span = h * hd..(h + 1) * hd;
                        let p = &probs[h * n..(h + 1) * n];
                        let gp: Vec<f64> = values
                            .iter()
                            .map(|&v| {
                                self.nodes[v].value[span.clone()]
                                    .iter()
                                    .zip(&g[span.clone()])
                                    .map(|(a, b)| a * b)
                                    .sum()
                            })
                            .collect();
                        let dot: f64 = p.iter().zip(&gp).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            let gv = acc(&mut grads, values[j], d);
                            for (a, b) in gv[span.clone()].iter_mut().zip(&g[span.clone()]) {
                                *a += p[j] * b;
                            }
                            let gs = p[j] * (gp[j] - dot) * scale;
                            if gs == 0.0 {
                                continue;
                            }
                            let kv = &self.nodes[keys[j]].value;
                            for (a, b) in gq[span.clone()].iter_mut().zip(&kv[span.clone()]) {
                                *a += gs * b;
                            }
                            let gk = acc(&mut grads, keys[j], d);
                            for (a, b) in gk[span.clone()].iter_mut().zip(&qv[span.clone()]) {
                                *a += gs * b;
                            }
                        }
                    }
                    add_into(acc(&mut grads, *q, d), &gq);
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let mut local: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                    local[*target] -= g[0];
                    add_into(acc(&mut grads, *logits, local.len()), &local);
                }
                Op::Mean(xs) => {
                    let share = g[0] / xs.len() as f64;
                    for &x in xs {
                        acc(&mut grads, x, 1)[0] += share;
                    }
                }
            }
        }
        pgrad
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
