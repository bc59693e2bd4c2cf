// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small-scale gradient training so calibration has a trained model to
//! work on.
//!
//! Each step samples `batch_size` random windows of `seq_len + 1` tokens,
//! backpropagates every window through the full recurrence on its own
//! worker and reduces the gradients in batch order. Parameters are kept in
//! `f64` for the update and rounded to `f32` afterwards, so the inference
//! model sees exactly the trained values.

pub mod graph;
pub mod tape;

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::backend::{try_map, Executor};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::rwkv::{RwkvConfig, RwkvModel};
use crate::tensors::{NamedTensor, TensorSet};
use crate::transformer::{TransformerConfig, TransformerModel};

pub use graph::Graph;
pub use tape::{ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seq_len: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Linear warm-up length; the rate then follows a cosine down to
    /// `min_lr_fraction · learning_rate`.
    pub warmup_steps: usize,
    pub min_lr_fraction: f64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 2e-3,
            seq_len: 128,
            batch_size: 8,
            seed: 0,
            optimizer: Optimizer::Adam,
            warmup_steps: 20,
            min_lr_fraction: 0.1,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.seq_len == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "seq_len and batch_size must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_lr_fraction) {
            return Err(Error::InvalidConfig(format!(
                "min_lr_fraction {} outside [0, 1]",
                self.min_lr_fraction
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!("grad clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Learning rate used at `step` (0-based).
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let lr = self.learning_rate;
        if step < self.warmup_steps {
            return lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1);
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        let cosine = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress.min(1.0)));
        lr * (self.min_lr_fraction + (1.0 - self.min_lr_fraction) * cosine)
    }
}

/// A model of either backend, as the trainer sees it.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainModel {
    Rwkv(RwkvModel),
    Transformer(TransformerModel),
}

impl TrainModel {
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        match self {
            Self::Rwkv(m) => m.named_tensors(),
            Self::Transformer(m) => m.named_tensors(),
        }
    }

    pub fn graph(&self, store: &ParamStore) -> Result<Graph> {
        match self {
            Self::Rwkv(m) => Graph::rwkv(*m.config(), store),
            Self::Transformer(m) => Graph::transformer(*m.config(), store),
        }
    }

    /// The same architecture with parameters from `store`.
    pub fn with_params(&self, store: &ParamStore) -> Result<Self> {
        let set = TensorSet::new(store.to_tensors())?;
        Ok(match self {
            Self::Rwkv(m) => Self::Rwkv(RwkvModel::from_tensors(*m.config(), set)?),
            Self::Transformer(m) => {
                Self::Transformer(TransformerModel::from_tensors(*m.config(), set)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossPoint {
    pub step: usize,
    pub learning_rate: f64,
    /// Mean NLL over the step's batch, before the update.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: TrainModel,
    pub curve: Vec<LossPoint>,
}

impl TrainOutput {
    pub fn final_loss(&self) -> Option<f64> {
        self.curve.last().map(|p| p.loss)
    }
}

/// Draws one training window from `docs`.
fn sample_window<'a>(docs: &[&'a [u32]], window: usize, rng: &mut rng::SeededRng) -> &'a [u32] {
    let doc = docs[rng.random_range(0..docs.len())];
    if doc.len() <= window {
        return doc;
    }
    let start = rng.random_range(0..=doc.len() - window);
    &doc[start..start + window]
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains `init` on `docs`. With `steps == 0` the initialization is
/// returned unchanged.
pub fn train<E: Executor + ?Sized>(
    init: TrainModel,
    docs: &[Document],
    config: &TrainConfig,
    exec: &E,
) -> Result<TrainOutput> {
    train_with_progress(init, docs, config, exec, &mut |_| {})
}

/// [`train`] with a callback after every step.
pub fn train_with_progress<E: Executor + ?Sized>(
    init: TrainModel,
    docs: &[Document],
    config: &TrainConfig,
    exec: &E,
    on_step: &mut dyn FnMut(&LossPoint),
) -> Result<TrainOutput> {
    config.validate()?;
    let tokens: Vec<&[u32]> = docs.iter().map(Document::tokens).collect();
    if tokens.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut store = ParamStore::from_tensors(&init.named_tensors())?;
    let graph = init.graph(&store)?;
    let window = match graph.max_window() {
        Some(max) => (config.seq_len + 1).min(max),
        None => config.seq_len + 1,
    };
    let mut adam = Adam {
        m: store.zeros_like(),
        v: store.zeros_like(),
        t: 0,
    };
    let mut curve = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut rng = rng::derive(config.seed, step as u64);
        let windows: Vec<&[u32]> = (0..config.batch_size)
            .map(|_| sample_window(&tokens, window, &mut rng))
            .collect();
        let parts = try_map(exec, windows.len(), &|i| {
            graph::loss_and_grad(&graph, &store, windows[i])
        })?;
        let inv = 1.0 / windows.len() as f64;
        let mut grad = store.zeros_like();
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l * inv;
            for (acc, part) in grad.iter_mut().zip(&g) {
                for (a, b) in acc.iter_mut().zip(part) {
                    *a += b * inv;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        if let Some(clip) = config.grad_clip {
            let norm = math::sqrt(grad.iter().flatten().map(|g| g * g).sum::<f64>());
            if norm > clip {
                let k = clip / norm;
                grad.iter_mut().flatten().for_each(|g| *g *= k);
            }
        }
        let lr = config.learning_rate_at(step);
        match config.optimizer {
            Optimizer::Sgd => {
                for (p, g) in store.data.iter_mut().zip(&grad) {
                    for (a, b) in p.iter_mut().zip(g) {
                        *a -= lr * b;
                    }
                }
            }
            Optimizer::Adam => {
                adam.t += 1;
                let c1 = 1.0 - libm::pow(BETA1, f64::from(adam.t));
                let c2 = 1.0 - libm::pow(BETA2, f64::from(adam.t));
                for (((p, g), m), v) in store
                    .data
                    .iter_mut()
                    .zip(&grad)
                    .zip(&mut adam.m)
                    .zip(&mut adam.v)
                {
                    for (((a, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *a -= lr * (*m / c1) / (math::sqrt(*v / c2) + ADAM_EPS);
                    }
                }
            }
        }
        store.round_to_f32();
        if store.data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
        let point = LossPoint {
            step,
            learning_rate: lr,
            loss,
        };
        on_step(&point);
        curve.push(point);
    }
    Ok(TrainOutput {
        model: init.with_params(&store)?,
        curve,
    })
}

/// Trains a freshly initialized RWKV model.
pub fn train_rwkv<E: Executor + ?Sized>(
    config: RwkvConfig,
    init_seed: u64,
    docs: &[Document],
    train_config: &TrainConfig,
    exec: &E,
) -> Result<(RwkvModel, Vec<LossPoint>)> {
    let out = train(
        TrainModel::Rwkv(RwkvModel::random(config, init_seed)?),
        docs,
        train_config,
        exec,
    )?;
    match out.model {
        TrainModel::Rwkv(m) => Ok((m, out.curve)),
        TrainModel::Transformer(_) => unreachable!("architecture is preserved"),
    }
}

/// Trains a freshly initialized transformer.
pub fn train_transformer<E: Executor + ?Sized>(
    config: TransformerConfig,
    init_seed: u64,
    docs: &[Document],
    train_config: &TrainConfig,
    exec: &E,
) -> Result<(TransformerModel, Vec<LossPoint>)> {
    let out = train(
        TrainModel::Transformer(TransformerModel::random(config, init_seed)?),
        docs,
        train_config,
        exec,
    )?;
    match out.model {
        TrainModel::Transformer(m) => Ok((m, out.curve)),
        TrainModel::Rwkv(_) => unreachable!("architecture is preserved"),
    }
}
