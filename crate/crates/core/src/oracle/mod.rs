//! Ground truth for checking the scorer: exact conditional mutual
//! information on small joints, synthetic corpora with known structure, and
//! the true next-token distribution of the synthetic Markov source.

pub mod cmi;
mod markov;
pub mod synth;

pub use cmi::{cmi_entropy_form, cmi_kl_form, one_sample_kl, surrogate_term, DiscreteJoint, KlValue};
pub use markov::MarkovProvider;
pub use synth::{generate, MarkovSpec, RecallSpec, RepeatSpec, SynthSpec};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("invalid argument: {0}")]
    Argument(String),
}
