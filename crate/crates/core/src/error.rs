// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("negative threshold {0}")]
    NegativeLambda(f32),
    #[error("unknown threshold site: {0}")]
    UnknownSite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence position {position} exceeds the model limit of {limit}")]
    SequenceTooLong { position: usize, limit: usize },
    #[error("not enough documents: need {needed}, have {available}")]
    InsufficientDocuments { needed: usize, available: usize },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("division by zero in {0}")]
    DivisionByZero(&'static str),
}
