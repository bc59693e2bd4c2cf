// SPDX-License-Identifier: MIT OR Apache-2.0

//! Training-free activation sparsification for recurrent language models.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every algorithmic
//! piece of the pipeline:
//!
//! ```text
//! corpus ──► train ──► RwkvModel / TransformerModel
//!                          │
//!            threshold sites before every linear layer
//!                          │
//!            calibrator (record → percentile λ → loss-guarded search)
//!                          │
//!            metrics (per-site sparsity, loss)  ──► hwcost (energy / latency)
//! ```
//!
//! IO, file formats, thread pools and the command line live in the `srlm`
//! companion crate. Work that fans out over documents goes through the
//! [`Executor`] trait so callers choose how it is scheduled; results are
//! always reduced in document order.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;
mod math;

pub mod backend;
pub mod calibrator;
pub mod corpus;
pub mod hwcost;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod rwkv;
pub mod tensors;
pub mod threshold;
pub mod train;
pub mod transformer;

pub use backend::{Executor, Sequential, SparseLm, TapSink};
pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
pub use threshold::{Position, SiteId, ThresholdAssignment, ThresholdSite};
