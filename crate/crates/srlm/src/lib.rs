// SPDX-License-Identifier: MIT OR Apache-2.0

//! IO and tooling around [`srlm_core`]: the model container, threshold
//! files and checkpoints, corpus loading, a rayon [`exec::Pool`], report
//! writers, cost-model configs and the `srlm` command line.

pub mod cli;
pub mod corpus_io;
pub mod cost_io;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod model_file;
pub mod reports;
pub mod thresholds;

pub use error::{Error, Result};
pub use model_file::Model;
