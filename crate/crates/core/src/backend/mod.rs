//! Next-token logprob providers.
//!
//! A provider answers one question: for a token sequence and a range of
//! positions, what is `ln p(tokens[i] | tokens[..i])` at each position. The
//! caller controls how much context a position sees by slicing the sequence
//! before asking. Both the built-in [`CacheNGramModel`] and remote HTTP
//! backends implement [`LogProbProvider`].

mod ngram;
pub mod wire;

pub use ngram::{CacheNGramModel, CacheParams, ModelFileError, MODEL_FORMAT_VERSION};

use serde::{Deserialize, Serialize};

/// Largest vocabulary for which a full next-token table is materialized.
pub const MAX_TABLE_VOCAB: u32 = 65536;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Capability(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// What a provider reports about itself (`GET /v1/info`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub vocab_size: u32,
    pub max_context: usize,
    pub tokenizer_id: String,
}

pub trait LogProbProvider: Send + Sync {
    fn info(&self) -> ProviderInfo;

    /// `values[i] = ln p(tokens[eval_start + i] | tokens[..eval_start + i])`.
    ///
    /// Requires `1 <= eval_start < eval_end <= tokens.len()`.
    fn logprobs(&self, tokens: &[u32], eval_start: usize, eval_end: usize) -> Result<Vec<f64>, BackendError>;
}

impl<P: LogProbProvider + ?Sized> LogProbProvider for std::sync::Arc<P> {
    fn info(&self) -> ProviderInfo {
        (**self).info()
    }

    fn logprobs(&self, tokens: &[u32], eval_start: usize, eval_end: usize) -> Result<Vec<f64>, BackendError> {
        (**self).logprobs(tokens, eval_start, eval_end)
    }
}

impl<P: LogProbProvider + ?Sized> LogProbProvider for &P {
    fn info(&self) -> ProviderInfo {
        (**self).info()
    }

    fn logprobs(&self, tokens: &[u32], eval_start: usize, eval_end: usize) -> Result<Vec<f64>, BackendError> {
        (**self).logprobs(tokens, eval_start, eval_end)
    }
}

/// Validates a logprob request against the wire contract.
pub fn check_request(
    tokens: &[u32],
    eval_start: usize,
    eval_end: usize,
    vocab_size: u32,
) -> Result<(), BackendError> {
    if eval_start == 0 {
        return Err(BackendError::Argument(
            "eval_start must be >= 1: position 0 has no prefix to condition on".into(),
        ));
    }
    if eval_start >= eval_end || eval_end > tokens.len() {
        return Err(BackendError::Argument(format!(
            "require 1 <= eval_start < eval_end <= {} (got eval_start={eval_start}, eval_end={eval_end})",
            tokens.len()
        )));
    }
    if let Some((pos, &tok)) = tokens[..eval_end].iter().enumerate().find(|(_, &t)| t >= vocab_size) {
        return Err(BackendError::Argument(format!(
            "token id {tok} at position {pos} >= vocab_size {vocab_size}"
        )));
    }
    Ok(())
}

/// Logprobs of realized tokens over `[eval_start, eval_start + values.len())`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbSlice {
    pub seq_id: String,
    pub eval_start: usize,
    pub values: Vec<f64>,
}

impl LogProbSlice {
    pub fn eval_end(&self) -> usize {
        self.eval_start + self.values.len()
    }
}

/// Exact next-token distribution over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DistTable {
    pub probs: Vec<f64>,
}

impl DistTable {
    pub fn new(probs: Vec<f64>) -> Result<Self, BackendError> {
        if probs.is_empty() {
            return Err(BackendError::Argument("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(BackendError::Argument("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = crate::NeumaierSum::from_iter(probs.iter().copied()).total();
        if (total - 1.0).abs() > 1e-9 {
            return Err(BackendError::Argument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn sum(&self) -> f64 {
        crate::NeumaierSum::from_iter(self.probs.iter().copied()).total()
    }
}
