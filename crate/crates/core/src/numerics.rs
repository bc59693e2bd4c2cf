// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scalar, vector and matrix kernels shared by both model backends.
//!
//! All accumulation runs in ascending index order. That is what makes the
//! event-driven linear layer bit-identical to the dense one: the skipped
//! terms are exact zeros and the surviving terms are added in the same order.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};
use crate::math;

/// A finite, non-empty `f32` vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(elements: Vec<f32>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Empty("vector"));
        }
        ensure_finite(&elements, "vector")?;
        Ok(Self(elements))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len.max(1)])
    }

    /// Wraps kernel output without re-validating it.
    pub(crate) fn from_raw(elements: Vec<f32>) -> Self {
        Self(elements)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl From<Vector> for Vec<f32> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

/// Row-major `rows × cols` matrix of finite `f32`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("matrix"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        ensure_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

/// How a linear layer visits its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearMode {
    /// Every weight is multiplied, zeros included.
    Dense,
    /// Weight columns whose input is exactly zero are never touched.
    Event,
}

/// Work performed by one [`linear_forward`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearOpTally {
    pub mac_count: u64,
    pub skipped_count: u64,
    pub input_len: usize,
    pub output_len: usize,
}

/// `y = W·x + b`.
pub fn linear_forward(
    w: &Matrix,
    bias: Option<&[f32]>,
    x: &[f32],
    mode: LinearMode,
) -> Result<(Vector, LinearOpTally)> {
    if x.len() != w.cols {
        return Err(Error::DimensionMismatch {
            context: "linear input",
            expected: w.cols,
            actual: x.len(),
        });
    }
    if let Some(b) = bias {
        if b.len() != w.rows {
            return Err(Error::DimensionMismatch {
                context: "linear bias",
                expected: w.rows,
                actual: b.len(),
            });
        }
    }
    ensure_finite(x, "linear input")?;

    let mut y = vec![0.0f32; w.rows];
    let tally = match mode {
        LinearMode::Dense => {
            for (r, out) in y.iter_mut().enumerate() {
                let row = w.row(r);
                let mut acc = 0.0f32;
                for (wv, xv) in row.iter().zip(x) {
                    acc += wv * xv;
                }
                *out = acc;
            }
            LinearOpTally {
                mac_count: (w.rows * w.cols) as u64,
                skipped_count: 0,
                input_len: w.cols,
                output_len: w.rows,
            }
        }
        LinearMode::Event => {
            let events: Vec<usize> = x
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, _)| i)
                .collect();
            for (r, out) in y.iter_mut().enumerate() {
                let row = w.row(r);
                let mut acc = 0.0f32;
                for &i in &events {
                    acc += row[i] * x[i];
                }
                *out = acc;
            }
            LinearOpTally {
                mac_count: (events.len() * w.rows) as u64,
                skipped_count: (w.cols - events.len()) as u64,
                input_len: w.cols,
                output_len: w.rows,
            }
        }
    };
    if let Some(b) = bias {
        for (out, bv) in y.iter_mut().zip(b) {
            *out += bv;
        }
    }
    Ok((Vector::from_raw(y), tally))
}

/// Standard layer normalization followed by the affine map `γ ⊙ x̂ + β`.
pub fn layer_norm(x: &[f32], gamma: &[f32], beta: &[f32], eps: f32) -> Result<Vector> {
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "layer norm",
            expected: x.len(),
            actual: if gamma.len() != x.len() {
                gamma.len()
            } else {
                beta.len()
            },
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("layer norm input"));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig("layer norm eps must be positive".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = x
        .iter()
        .map(|&v| {
            let c = f64::from(v) - mean;
            c * c
        })
        .sum::<f64>()
        / n;
    let inv_std = 1.0 / math::sqrt(var + f64::from(eps));
    let out = x
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&v, (&g, &b))| ((f64::from(v) - mean) * inv_std) as f32 * g + b)
        .collect();
    Ok(Vector::from_raw(out))
}

/// Elementwise non-linearities used inside the blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
    ReluSquared,
    /// `exp` with its argument clamped to `[-30, 30]`.
    Exp,
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + math::exp_clamped(-v))
}

#[inline]
pub fn relu_squared(v: f32) -> f32 {
    let r = v.max(0.0);
    r * r
}

pub fn activation_apply(kind: Activation, x: &[f32]) -> Result<Vector> {
    ensure_finite(x, "activation input")?;
    let f: fn(f32) -> f32 = match kind {
        Activation::Sigmoid => sigmoid,
        Activation::Relu => |v| v.max(0.0),
        Activation::ReluSquared => relu_squared,
        Activation::Exp => math::exp_clamped,
    };
    Ok(Vector::from_raw(x.iter().map(|&v| f(v)).collect()))
}

/// `−log softmax(logits)[target]`, computed in `f64` with max subtraction.
pub fn softmax_cross_entropy(logits: &[f32], target: u32) -> Result<f64> {
    let t = target as usize;
    if t >= logits.len() {
        return Err(Error::TokenOutOfRange {
            token: target,
            vocab: logits.len(),
        });
    }
    let max = logits
        .iter()
        .fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let max = f64::from(max);
    let sum: f64 = logits
        .iter()
        .map(|&v| math::exp(f64::from(v) - max))
        .sum();
    let nll = math::ln(sum) - (f64::from(logits[t]) - max);
    if !nll.is_finite() {
        return Err(Error::NonFinite("cross entropy"));
    }
    Ok(nll)
}

/// Number of elements that are exactly zero (`-0.0` counts).
#[inline]
pub fn count_zeros(x: &[f32]) -> usize {
    x.iter().filter(|v| **v == 0.0).count()
}

/// Fraction of elements that are exactly zero.
pub fn vector_sparsity(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    count_zeros(x) as f64 / x.len() as f64
}

pub(crate) fn ensure_finite(x: &[f32], context: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
