//! Long-context data curation by context information gain.
//!
//! Every token of a packed corpus is scored by how much a long prefix
//! improves the prediction of that token over a short prefix
//! (`p_long * ln(p_long / p_short)`), scores are averaged per sequence, and
//! the top fraction of sequences is kept for long-context training.
//!
//! The crate is organized along the pipeline:
//!
//! - [`corpus`]: ingestion, tokenization, length partitioning and packing.
//! - [`backend`]: the [`backend::LogProbProvider`] contract and the built-in
//!   cache-augmented n-gram model.
//! - [`scorer`]: chunk planning, long/short logprob passes, token and
//!   sequence scores.
//! - [`selector`]: ranking, top-fraction selection and mixture recipes.
//! - [`oracle`]: exact conditional mutual information at small scale and
//!   synthetic corpora with known dependency structure.
//! - [`report`]: per-token heatmap reports.
//! - [`config`]: the pipeline configuration file and its digest.

pub mod backend;
pub mod config;
pub mod corpus;
pub mod oracle;
pub mod records;
pub mod report;
pub mod scorer;
pub mod selector;

mod numeric;

pub use numeric::NeumaierSum;

/// Version string embedded in every artifact this crate writes.
pub const TOOL_VERSION: &str = concat!("longfilter/", env!("CARGO_PKG_VERSION"));
