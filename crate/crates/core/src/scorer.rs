//! Token and sequence scoring.
//!
//! Each position `i >= 1` of a packed sequence is evaluated twice: once with
//! the long context (the full prefix, truncated to `long_len` tokens) and
//! once inside a short overlapping chunk. The token gain is
//!
//! `gain_i = p_long * ln(p_long / p_short) = exp(lp_long) * (lp_long - lp_short)`
//!
//! and the sequence score is the mean gain over all scored positions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, LogProbProvider, LogProbSlice};
use crate::corpus::PackedSequence;
use crate::NeumaierSum;

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("sequence {seq_id}: {source}")]
    Backend {
        seq_id: String,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub short_len: usize,
    pub long_len: usize,
    pub chunk_len: usize,
    pub overlap: usize,
    pub mask_doc_boundaries: bool,
    pub clip_negative: bool,
}

impl ScoringConfig {
    /// Chunk length defaults to `short_len` and overlap to half a chunk.
    pub fn new(short_len: usize, long_len: usize) -> Self {
        Self {
            short_len,
            long_len,
            chunk_len: short_len,
            overlap: short_len / 2,
            mask_doc_boundaries: false,
            clip_negative: false,
        }
    }

    pub fn with_chunking(mut self, chunk_len: usize, overlap: usize) -> Self {
        self.chunk_len = chunk_len;
        self.overlap = overlap;
        self
    }

    pub fn validate(&self, pack_len: usize) -> Result<(), ScoreError> {
        let fail = |msg: String| Err(ScoreError::Argument(msg));
        if self.short_len == 0 || self.short_len >= self.long_len {
            return fail(format!(
                "need 0 < short_len < long_len (short_len={}, long_len={})",
                self.short_len, self.long_len
            ));
        }
        if self.long_len > pack_len {
            return fail(format!("long_len {} exceeds pack_len {pack_len}", self.long_len));
        }
        if self.chunk_len > self.long_len {
            return fail(format!(
                "chunk_len {} exceeds long_len {}; short contexts would outgrow long ones",
                self.chunk_len, self.long_len
            ));
        }
        if self.overlap >= self.chunk_len {
            return fail(format!("overlap {} must be below chunk_len {}", self.overlap, self.chunk_len));
        }
        Ok(())
    }
}

/// One short-context chunk: tokens `[start, end)` are given to the model and
/// positions `[score_from, end)` are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    pub score_from: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub pack_len: usize,
    pub chunks: Vec<Chunk>,
}

/// Chunks start every `chunk_len - overlap` tokens. The first chunk is
/// scored from position 1; later chunks skip their first `overlap`
/// positions, which the previous chunk already scored.
pub fn plan_chunks(pack_len: usize, chunk_len: usize, overlap: usize) -> Result<ChunkPlan, ScoreError> {
    if !(overlap < chunk_len && chunk_len <= pack_len) || pack_len < 2 {
        return Err(ScoreError::Argument(format!(
            "require 0 <= overlap < chunk_len <= pack_len and pack_len >= 2 \
             (overlap={overlap}, chunk_len={chunk_len}, pack_len={pack_len})"
        )));
    }
    let stride = chunk_len - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + chunk_len).min(pack_len);
        let score_from = if start == 0 { 1 } else { start + overlap };
        chunks.push(Chunk { start, end, score_from });
        if end == pack_len {
            break;
        }
        start += stride;
    }
    Ok(ChunkPlan { pack_len, chunks })
}

/// Evaluates `positions` where each position `i` conditions on
/// `tokens[context_start(i)..i]`. Runs of positions sharing a context start
/// go to the provider as one request.
fn eval_positions<P, F>(
    provider: &P,
    tokens: &[u32],
    positions: std::ops::Range<usize>,
    context_start: F,
    out: &mut Vec<f64>,
) -> Result<(), BackendError>
where
    P: LogProbProvider + ?Sized,
    F: Fn(usize) -> usize,
{
    let mut i = positions.start;
    while i < positions.end {
        let c = context_start(i);
        let mut j = i + 1;
        while j < positions.end && context_start(j) == c {
            j += 1;
        }
        out.extend(provider.logprobs(&tokens[c..j], i - c, j - c)?);
        i = j;
    }
    Ok(())
}

/// Clamps a context start so that at least one token of context remains;
/// the logprob contract has no empty-context query.
fn at_least_one(start: usize, pos: usize) -> usize {
    start.min(pos - 1)
}

/// Long-context logprobs for positions `[1, pack_len)`.
pub fn long_logprobs<P: LogProbProvider + ?Sized>(
    provider: &P,
    seq: &PackedSequence,
    config: &ScoringConfig,
) -> Result<LogProbSlice, ScoreError> {
    let mut values = Vec::with_capacity(seq.len().saturating_sub(1));
    let context_start = |i: usize| {
        let mut c = i.saturating_sub(config.long_len);
        if config.mask_doc_boundaries {
            c = c.max(seq.span_start(i));
        }
        at_least_one(c, i)
    };
    eval_positions(provider, &seq.tokens, 1..seq.len(), context_start, &mut values).map_err(|source| {
        ScoreError::Backend {
            seq_id: seq.seq_id.clone(),
            source,
        }
    })?;
    Ok(LogProbSlice {
        seq_id: seq.seq_id.clone(),
        eval_start: 1,
        values,
    })
}

/// Short-context logprobs for positions `[1, pack_len)`: every position is
/// evaluated inside the one chunk whose scoring range contains it, seeing
/// only that chunk's tokens before it.
pub fn short_logprobs<P: LogProbProvider + ?Sized>(
    provider: &P,
    seq: &PackedSequence,
    plan: &ChunkPlan,
    mask_doc_boundaries: bool,
) -> Result<LogProbSlice, ScoreError> {
    if plan.pack_len != seq.len() {
        return Err(ScoreError::Argument(format!(
            "chunk plan covers {} tokens but sequence {} has {}",
            plan.pack_len,
            seq.seq_id,
            seq.len()
        )));
    }
    let mut values = Vec::with_capacity(seq.len().saturating_sub(1));
    for chunk in &plan.chunks {
        let context_start = |i: usize| {
            let mut c = chunk.start;
            if mask_doc_boundaries {
                c = c.max(seq.span_start(i));
            }
            at_least_one(c, i)
        };
        eval_positions(provider, &seq.tokens, chunk.score_from..chunk.end, context_start, &mut values).map_err(
            |source| ScoreError::Backend {
                seq_id: seq.seq_id.clone(),
                source,
            },
        )?;
    }
    Ok(LogProbSlice {
        seq_id: seq.seq_id.clone(),
        eval_start: 1,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub position: usize,
    pub lp_long: f64,
    pub lp_short: f64,
    pub gain: f64,
}

/// Probability form of the token gain.
pub fn gain_from_logprobs(lp_long: f64, lp_short: f64) -> f64 {
    lp_long.exp() * (lp_long - lp_short)
}

/// Loss form of the token gain: `exp(-L_long) * (L_short - L_long)` with
/// `L = -lp`.
pub fn gain_from_losses(loss_long: f64, loss_short: f64) -> f64 {
    (-loss_long).exp() * (loss_short - loss_long)
}

pub fn token_scores(lp_long: &LogProbSlice, lp_short: &LogProbSlice) -> Result<Vec<TokenScore>, ScoreError> {
    token_scores_with(lp_long, lp_short, false)
}

/// Like [`token_scores`], optionally flooring negative gains at zero.
pub fn token_scores_with(
    lp_long: &LogProbSlice,
    lp_short: &LogProbSlice,
    clip_negative: bool,
) -> Result<Vec<TokenScore>, ScoreError> {
    if lp_long.eval_start != lp_short.eval_start || lp_long.values.len() != lp_short.values.len() {
        return Err(ScoreError::Argument(format!(
            "misaligned slices: long covers [{}, {}), short covers [{}, {})",
            lp_long.eval_start,
            lp_long.eval_end(),
            lp_short.eval_start,
            lp_short.eval_end()
        )));
    }
    Ok(lp_long
        .values
        .iter()
        .zip(&lp_short.values)
        .enumerate()
        .map(|(k, (&l, &s))| {
            let gain = gain_from_logprobs(l, s);
            TokenScore {
                position: lp_long.eval_start + k,
                lp_long: l,
                lp_short: s,
                gain: if clip_negative { gain.max(0.0) } else { gain },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub seq_id: String,
    pub score: f64,
    pub n_scored: usize,
}

/// Mean gain, accumulated with compensated summation.
pub fn aggregate(scores: &[TokenScore], seq_id: &str) -> Result<SequenceScore, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::Argument(format!("no token scores for {seq_id}")));
    }
    let sum: NeumaierSum = scores.iter().map(|s| s.gain).collect();
    Ok(SequenceScore {
        seq_id: seq_id.to_string(),
        score: sum.total() / scores.len() as f64,
        n_scored: scores.len(),
    })
}

/// Plans chunks, runs both passes, and aggregates.
pub fn score_sequence<P: LogProbProvider + ?Sized>(
    provider: &P,
    seq: &PackedSequence,
    config: &ScoringConfig,
) -> Result<(SequenceScore, Vec<TokenScore>), ScoreError> {
    config.validate(seq.len())?;
    let plan = plan_chunks(seq.len(), config.chunk_len, config.overlap)?;
    let long = long_logprobs(provider, seq, config)?;
    let short = short_logprobs(provider, seq, &plan, config.mask_doc_boundaries)?;
    let tokens = token_scores_with(&long, &short, config.clip_negative)?;
    let summary = aggregate(&tokens, &seq.seq_id)?;
    Ok((summary, tokens))
}

/// Outcome of scoring one sequence inside a batch.
pub type ScoredSequence = Result<(SequenceScore, Vec<TokenScore>), ScoreError>;

/// Scores sequences on a pool of `workers` threads. Results are returned in
/// input order regardless of completion order.
pub fn score_batch<P: LogProbProvider + ?Sized>(
    provider: &P,
    seqs: &[PackedSequence],
    config: &ScoringConfig,
    workers: usize,
) -> Vec<ScoredSequence> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| seqs.par_iter().map(|s| score_sequence(provider, s, config)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    use crate::backend::ProviderInfo;
    use crate::corpus::Span;

    /// Logprob depends on how many context tokens are visible: ln(1/(2+k)).
    /// Records every request for inspection.
    #[derive(Default)]
    struct ContextLengthProvider {
        calls: Mutex<Vec<(usize, usize, usize)>>,
    }

    impl LogProbProvider for ContextLengthProvider {
        fn info(&self) -> ProviderInfo {
            ProviderInfo {
                vocab_size: 256,
                max_context: usize::MAX,
                tokenizer_id: "byte".into(),
            }
        }

        fn logprobs(&self, tokens: &[u32], s: usize, e: usize) -> Result<Vec<f64>, BackendError> {
            crate::backend::check_request(tokens, s, e, 256)?;
            self.calls.lock().unwrap().push((tokens.len(), s, e));
            Ok((s..e).map(|k| -((2 + k) as f64).ln()).collect())
        }
    }

    fn seq(len: usize) -> PackedSequence {
        PackedSequence {
            seq_id: "s".into(),
            tokens: (0..len as u32).map(|t| t % 7).collect(),
            spans: vec![Span {
                doc_id: "d".into(),
                start: 0,
                end: len,
            }],
        }
    }

    #[test]
    fn plan_with_overlap() {
        let plan = plan_chunks(16, 8, 4).unwrap();
        assert_eq!(
            plan.chunks,
            vec![
                Chunk { start: 0, end: 8, score_from: 1 },
                Chunk { start: 4, end: 12, score_from: 8 },
                Chunk { start: 8, end: 16, score_from: 12 },
            ]
        );
    }

    #[test]
    fn plan_without_overlap_tiles() {
        let plan = plan_chunks(16, 4, 0).unwrap();
        let starts: Vec<_> = plan.chunks.iter().map(|c| (c.start, c.score_from)).collect();
        assert_eq!(starts, vec![(0, 1), (4, 4), (8, 8), (12, 12)]);
    }

    #[test]
    fn plan_single_chunk() {
        let plan = plan_chunks(16, 16, 3).unwrap();
        assert_eq!(plan.chunks, vec![Chunk { start: 0, end: 16, score_from: 1 }]);
    }

    #[test]
    fn plan_rejects_bad_arguments() {
        assert!(plan_chunks(16, 8, 8).is_err());
        assert!(plan_chunks(16, 17, 0).is_err());
        assert!(plan_chunks(1, 1, 0).is_err());
    }

    #[test]
    fn plan_partial_last_chunk() {
        let plan = plan_chunks(11, 4, 1).unwrap();
        assert_eq!(plan.chunks.last(), Some(&Chunk { start: 9, end: 11, score_from: 10 }));
    }

    #[test]
    fn short_pass_context_lengths() {
        let p = ContextLengthProvider::default();
        let s = seq(16);
        let plan = plan_chunks(16, 8, 4).unwrap();
        let short = short_logprobs(&p, &s, &plan, false).unwrap();
        assert_eq!(short.values.len(), 15);
        // positions 8..11 see tokens 4..i, i.e. k = i - 4 tokens of context
        for i in 8..12 {
            assert_eq!(short.values[i - 1], -((2 + i - 4) as f64).ln());
        }
        let calls = p.calls.lock().unwrap().clone();
        assert_eq!(calls, vec![(8, 1, 8), (8, 4, 8), (8, 4, 8)]);
    }

    #[test]
    fn long_pass_truncates_to_long_len() {
        let p = ContextLengthProvider::default();
        let s = seq(12);
        let cfg = ScoringConfig::new(2, 4).with_chunking(4, 2);
        let long = long_logprobs(&p, &s, &cfg).unwrap();
        assert_eq!(long.values[0], -(3f64).ln()); // position 1: one token
        for i in 4..12 {
            assert_eq!(long.values[i - 1], -(6f64).ln());
        }
        let full = ScoringConfig::new(2, 12).with_chunking(4, 2);
        let p2 = ContextLengthProvider::default();
        long_logprobs(&p2, &s, &full).unwrap();
        assert_eq!(p2.calls.lock().unwrap().clone(), vec![(12, 1, 12)]);
    }

    #[test]
    fn masking_truncates_at_span_start() {
        let p = ContextLengthProvider::default();
        let mut s = seq(12);
        s.spans = vec![
            Span { doc_id: "a".into(), start: 0, end: 5 },
            Span { doc_id: "b".into(), start: 5, end: 12 },
        ];
        let mut cfg = ScoringConfig::new(4, 12);
        cfg.mask_doc_boundaries = true;
        let long = long_logprobs(&p, &s, &cfg).unwrap();
        // position 5 starts doc b: context clamped to one token
        assert_eq!(long.values[4], -(3f64).ln());
        // position 6 sees only token 5
        assert_eq!(long.values[5], -(3f64).ln());
        assert_eq!(long.values[8], -(6f64).ln());
    }

    #[test]
    fn single_chunk_short_equals_long() {
        let p = ContextLengthProvider::default();
        let s = seq(32);
        let cfg = ScoringConfig::new(16, 32).with_chunking(32, 4);
        let plan = plan_chunks(32, 32, 4).unwrap();
        let long = long_logprobs(&p, &s, &cfg).unwrap();
        let short = short_logprobs(&p, &s, &plan, false).unwrap();
        assert_eq!(long, short);
    }

    #[test]
    fn gains_hand_values() {
        assert_eq!(gain_from_logprobs(-0.3, -0.3), 0.0);
        let g = gain_from_logprobs(0.8f64.ln(), 0.2f64.ln());
        assert!((g - 0.8 * 4f64.ln()).abs() < 1e-15);
        assert!((g - 1.109_035_488_895_912_5).abs() < 1e-12);
        let g = gain_from_logprobs(0.1f64.ln(), 0.9f64.ln());
        assert!((g - (-0.219_722_457_733_621_95)).abs() < 1e-12);
    }

    #[test]
    fn misaligned_slices_rejected() {
        let a = LogProbSlice { seq_id: "s".into(), eval_start: 1, values: vec![0.0; 3] };
        let b = LogProbSlice { seq_id: "s".into(), eval_start: 2, values: vec![0.0; 3] };
        assert!(token_scores(&a, &b).is_err());
    }

    #[test]
    fn negative_gains_kept_unless_clipped() {
        let a = LogProbSlice { seq_id: "s".into(), eval_start: 1, values: vec![-2.0] };
        let b = LogProbSlice { seq_id: "s".into(), eval_start: 1, values: vec![-1.0] };
        assert!(token_scores(&a, &b).unwrap()[0].gain < 0.0);
        assert_eq!(token_scores_with(&a, &b, true).unwrap()[0].gain, 0.0);
    }

    #[test]
    fn aggregate_examples() {
        let mk = |gains: &[f64]| -> Vec<TokenScore> {
            gains
                .iter()
                .enumerate()
                .map(|(i, &g)| TokenScore { position: i + 1, lp_long: 0.0, lp_short: 0.0, gain: g })
                .collect()
        };
        let s = aggregate(&mk(&[0.5, 1.5, -0.2]), "x").unwrap();
        assert!((s.score - 0.6).abs() < 1e-15);
        assert_eq!(s.n_scored, 3);
        assert_eq!(aggregate(&mk(&[0.0; 5]), "x").unwrap().score, 0.0);
        assert!(aggregate(&[], "x").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ScoringConfig::new(4, 16).validate(16).is_ok());
        assert!(ScoringConfig::new(16, 16).validate(16).is_err());
        assert!(ScoringConfig::new(4, 32).validate(16).is_err());
        assert!(ScoringConfig::new(4, 16).with_chunking(4, 4).validate(16).is_err());
        assert!(ScoringConfig::new(4, 8).with_chunking(12, 2).validate(16).is_err());
    }
}
