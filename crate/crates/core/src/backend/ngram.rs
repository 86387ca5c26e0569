use std::collections::HashMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_request, BackendError, DistTable, LogProbProvider, ProviderInfo, MAX_TABLE_VOCAB};
use crate::corpus::TokenizedDoc;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "longfilter-cache-ngram";

/// Context window the built-in model advertises; it has no inherent limit.
const BUILTIN_MAX_CONTEXT: usize = 1 << 24;

/// Longest context stored in a table: 8 tokens of 16 bits in a `u128` key.
const MAX_ORDER: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("model file I/O: {0}")]
    Io(#[from] io::Error),
    #[error("model file is not valid: {0}")]
    Format(String),
}

/// Hyperparameters of the cache-augmented n-gram model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheParams {
    /// Maximum n-gram length; the model conditions on up to `order - 1`
    /// previous tokens.
    pub order: usize,
    /// Additive smoothing constant.
    pub add_k: f64,
    /// Weight of the cache component, in `[0, 1)`.
    pub cache_lambda: f64,
    /// Per-token geometric recency decay of the cache, in `(0, 1]`.
    pub cache_decay: f64,
}

impl Default for CacheParams {
    fn default() -> Self {
        Self {
            order: 3,
            add_k: 0.01,
            cache_lambda: 0.3,
            cache_decay: 0.999,
        }
    }
}

impl CacheParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.order < 1 || self.order > MAX_ORDER {
            return Err(BackendError::Config(format!(
                "order must be in 1..={MAX_ORDER}, got {}",
                self.order
            )));
        }
        if !(self.add_k > 0.0 && self.add_k.is_finite()) {
            return Err(BackendError::Config(format!("add_k must be > 0, got {}", self.add_k)));
        }
        if !(0.0..1.0).contains(&self.cache_lambda) {
            return Err(BackendError::Config(format!(
                "cache_lambda must be in [0, 1), got {}",
                self.cache_lambda
            )));
        }
        if !(self.cache_decay > 0.0 && self.cache_decay <= 1.0) {
            return Err(BackendError::Config(format!(
                "cache_decay must be in (0, 1], got {}",
                self.cache_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(u32, u64)>,
}

impl ContextCounts {
    fn count(&self, token: u32) -> u64 {
        self.next
            .binary_search_by_key(&token, |&(t, _)| t)
            .map_or(0, |i| self.next[i].1)
    }
}

fn context_key(context: &[u32]) -> u128 {
    context.iter().fold(0u128, |acc, &t| (acc << 16) | u128::from(t))
}

fn key_tokens(key: u128, len: usize) -> Vec<u32> {
    (0..len)
        .map(|i| ((key >> (16 * (len - 1 - i))) & 0xffff) as u32)
        .collect()
}

/// Interpolation of an add-k smoothed n-gram model with a decayed-recency
/// unigram cache over the visible prefix:
///
/// `p(t | prefix) = (1 - λ) p_ngram(t | last order-1 tokens) + λ p_cache(t | prefix)`
///
/// where `p_cache(t) ∝ Σ_{j: x_j = t} decay^(i-1-j)` and `λ = 0` for an
/// empty prefix. The n-gram part uses the longest available context up to
/// `order - 1` tokens; an unseen context gives the uniform distribution.
///
/// A fitted model is immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheNGramModel {
    params: CacheParams,
    vocab_size: u32,
    tokenizer_id: String,
    /// `tables[m]` holds counts for contexts of length `m`.
    tables: Vec<HashMap<u128, ContextCounts>>,
}

impl CacheNGramModel {
    pub fn fit<'a, I>(docs: I, vocab_size: u32, params: CacheParams) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = &'a TokenizedDoc>,
    {
        params.validate()?;
        if vocab_size == 0 || vocab_size > MAX_TABLE_VOCAB {
            return Err(BackendError::Config(format!(
                "vocab_size must be in 1..={MAX_TABLE_VOCAB}, got {vocab_size}"
            )));
        }
        let mut raw: Vec<HashMap<u128, HashMap<u32, u64>>> = vec![HashMap::new(); params.order];
        let mut tokenizer_id: Option<String> = None;
        let mut seen_tokens = 0usize;
        for doc in docs {
            match &tokenizer_id {
                None => tokenizer_id = Some(doc.tokenizer_id.clone()),
                Some(id) if *id != doc.tokenizer_id => {
                    return Err(BackendError::Config(format!(
                        "mixed tokenizers in corpus: {id} and {}",
                        doc.tokenizer_id
                    )))
                }
                Some(_) => {}
            }
            if let Some(&bad) = doc.tokens.iter().find(|&&t| t >= vocab_size) {
                return Err(BackendError::Config(format!(
                    "document {} has token {bad} >= vocab_size {vocab_size}",
                    doc.doc_id
                )));
            }
            let toks = &doc.tokens;
            for i in 0..toks.len() {
                for m in 0..params.order.min(i + 1) {
                    let key = context_key(&toks[i - m..i]);
                    *raw[m].entry(key).or_default().entry(toks[i]).or_insert(0) += 1;
                }
            }
            seen_tokens += toks.len();
        }
        if seen_tokens == 0 {
            return Err(BackendError::Config("cannot fit a model on an empty corpus".into()));
        }
        let tables = raw
            .into_iter()
            .map(|table| {
                table
                    .into_iter()
                    .map(|(key, next)| {
                        let mut next: Vec<(u32, u64)> = next.into_iter().collect();
                        next.sort_unstable();
                        let total = next.iter().map(|&(_, c)| c).sum();
                        (key, ContextCounts { total, next })
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            params,
            vocab_size,
            tokenizer_id: tokenizer_id.unwrap_or_default(),
            tables,
        })
    }

    pub fn params(&self) -> &CacheParams {
        &self.params
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn tokenizer_id(&self) -> &str {
        &self.tokenizer_id
    }

    /// Number of tokens the model was fitted on.
    pub fn tokens_seen(&self) -> u64 {
        self.tables[0].get(&0).map_or(0, |c| c.total)
    }

    /// Raw n-gram count of `token` following `context` (context length must
    /// be below `order`).
    pub fn ngram_count(&self, context: &[u32], token: u32) -> u64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(&context_key(context)))
            .map_or(0, |c| c.count(token))
    }

    fn context_counts(&self, prefix: &[u32]) -> Option<&ContextCounts> {
        let m = prefix.len().min(self.params.order - 1);
        self.tables[m].get(&context_key(&prefix[prefix.len() - m..]))
    }

    fn ngram_prob(&self, counts: Option<&ContextCounts>, token: u32) -> f64 {
        let k = self.params.add_k;
        let (c, total) = counts.map_or((0, 0), |cc| (cc.count(token), cc.total));
        (c as f64 + k) / (total as f64 + k * f64::from(self.vocab_size))
    }

    fn mix(&self, ngram: f64, cache: &CacheState, token: u32) -> f64 {
        if cache.is_empty() {
            ngram
        } else {
            let lambda = self.params.cache_lambda;
            (1.0 - lambda) * ngram + lambda * cache.prob(token)
        }
    }

    /// `ln p(tokens[i] | tokens[..i])` for `i` in `[eval_start, eval_end)`.
    pub fn logprob_slice(&self, tokens: &[u32], eval_start: usize, eval_end: usize) -> Result<Vec<f64>, BackendError> {
        check_request(tokens, eval_start, eval_end, self.vocab_size)?;
        let mut cache = CacheState::new(self.params.cache_decay, self.vocab_size);
        for &t in &tokens[..eval_start] {
            cache.observe(t);
        }
        let mut out = Vec::with_capacity(eval_end - eval_start);
        for i in eval_start..eval_end {
            let t = tokens[i];
            let p = self.mix(self.ngram_prob(self.context_counts(&tokens[..i]), t), &cache, t);
            out.push(p.ln());
            cache.observe(t);
        }
        Ok(out)
    }

    /// Exact next-token distribution after `prefix`.
    pub fn full_next_distribution(&self, prefix: &[u32]) -> Result<DistTable, BackendError> {
        if self.vocab_size > MAX_TABLE_VOCAB {
            return Err(BackendError::Capability(format!(
                "vocabulary of {} is too large for a full table",
                self.vocab_size
            )));
        }
        if let Some(&bad) = prefix.iter().find(|&&t| t >= self.vocab_size) {
            return Err(BackendError::Argument(format!("token id {bad} >= vocab_size {}", self.vocab_size)));
        }
        let mut cache = CacheState::new(self.params.cache_decay, self.vocab_size);
        for &t in prefix {
            cache.observe(t);
        }
        let counts = self.context_counts(prefix);
        let probs = (0..self.vocab_size)
            .map(|t| self.mix(self.ngram_prob(counts, t), &cache, t))
            .collect();
        Ok(DistTable { probs })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }

    /// Serializes to the versioned JSON model format. Contexts are written
    /// in sorted order so equal models produce identical bytes.
    pub fn write_to<W: Write>(&self, w: W) -> Result<(), ModelFileError> {
        let tables = self
            .tables
            .iter()
            .enumerate()
            .map(|(m, table)| {
                let mut keys: Vec<&u128> = table.keys().collect();
                keys.sort_unstable();
                keys.into_iter()
                    .map(|k| {
                        let c = &table[k];
                        ContextRecord {
                            context: key_tokens(*k, m),
                            total: c.total,
                            next: c.next.clone(),
                        }
                    })
                    .collect()
            })
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            format_version: MODEL_FORMAT_VERSION,
            tokenizer_id: self.tokenizer_id.clone(),
            vocab_size: self.vocab_size,
            params: self.params,
            tables,
        };
        serde_json::to_writer(w, &file).map_err(|e| ModelFileError::Io(e.into()))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, ModelFileError> {
        let file: ModelFile = serde_json::from_reader(r).map_err(|e| ModelFileError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(ModelFileError::Format(format!("unknown format tag {:?}", file.format)));
        }
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelFileError::Format(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        file.params.validate().map_err(|e| ModelFileError::Format(e.to_string()))?;
        if file.vocab_size == 0 || file.vocab_size > MAX_TABLE_VOCAB {
            return Err(ModelFileError::Format(format!("bad vocab_size {}", file.vocab_size)));
        }
        if file.tables.len() != file.params.order {
            return Err(ModelFileError::Format(format!(
                "expected {} count tables, found {}",
                file.params.order,
                file.tables.len()
            )));
        }
        let mut tables = Vec::with_capacity(file.tables.len());
        for (m, records) in file.tables.into_iter().enumerate() {
            let mut table = HashMap::with_capacity(records.len());
            for rec in records {
                if rec.context.len() != m {
                    return Err(ModelFileError::Format(format!(
                        "context of length {} in table {m}",
                        rec.context.len()
                    )));
                }
                if rec.context.iter().chain(rec.next.iter().map(|(t, _)| t)).any(|&t| t >= file.vocab_size)
                    || rec.next.windows(2).any(|w| w[0].0 >= w[1].0)
                    || rec.next.iter().map(|&(_, c)| c).sum::<u64>() != rec.total
                {
                    return Err(ModelFileError::Format(format!("inconsistent counts in table {m}")));
                }
                table.insert(
                    context_key(&rec.context),
                    ContextCounts {
                        total: rec.total,
                        next: rec.next,
                    },
                );
            }
            tables.push(table);
        }
        Ok(Self {
            params: file.params,
            vocab_size: file.vocab_size,
            tokenizer_id: file.tokenizer_id,
            tables,
        })
    }
}

impl LogProbProvider for CacheNGramModel {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            vocab_size: self.vocab_size,
            max_context: BUILTIN_MAX_CONTEXT,
            tokenizer_id: self.tokenizer_id.clone(),
        }
    }

    fn logprobs(&self, tokens: &[u32], eval_start: usize, eval_end: usize) -> Result<Vec<f64>, BackendError> {
        if tokens.len() > BUILTIN_MAX_CONTEXT {
            return Err(BackendError::Argument(format!(
                "sequence of {} tokens exceeds max_context {BUILTIN_MAX_CONTEXT}",
                tokens.len()
            )));
        }
        self.logprob_slice(tokens, eval_start, eval_end)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    format_version: u32,
    tokenizer_id: String,
    vocab_size: u32,
    params: CacheParams,
    tables: Vec<Vec<ContextRecord>>,
}

#[derive(Serialize, Deserialize)]
struct ContextRecord {
    context: Vec<u32>,
    total: u64,
    next: Vec<(u32, u64)>,
}

/// Decayed-recency token weights over a growing prefix, updated in O(1) per
/// token. Weights are stored lazily as (value at last occurrence, index of
/// last occurrence) and decayed on read.
struct CacheState {
    decay: f64,
    weight: Vec<f64>,
    last: Vec<usize>,
    norm: f64,
    len: usize,
}

impl CacheState {
    fn new(decay: f64, vocab_size: u32) -> Self {
        Self {
            decay,
            weight: vec![0.0; vocab_size as usize],
            last: vec![0; vocab_size as usize],
            norm: 0.0,
            len: 0,
        }
    }

    fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Decayed weight of `token` for predicting position `self.len`.
    fn weight_of(&self, token: u32) -> f64 {
        let w = self.weight[token as usize];
        if w == 0.0 {
            return 0.0;
        }
        let age = self.len - 1 - self.last[token as usize];
        w * self.decay.powi(age as i32)
    }

    fn prob(&self, token: u32) -> f64 {
        self.weight_of(token) / self.norm
    }

    fn observe(&mut self, token: u32) {
        let i = token as usize;
        let w = self.weight[i];
        self.weight[i] = if w == 0.0 {
            1.0
        } else {
            w * self.decay.powi((self.len - self.last[i]) as i32) + 1.0
        };
        self.last[i] = self.len;
        self.norm = self.norm * self.decay + 1.0;
        self.len += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &[u8]) -> TokenizedDoc {
        TokenizedDoc {
            doc_id: "d".into(),
            source: "s".into(),
            tokens: text.iter().map(|&b| u32::from(b)).collect(),
            tokenizer_id: "byte".into(),
        }
    }

    fn params(order: usize, add_k: f64, lambda: f64, decay: f64) -> CacheParams {
        CacheParams {
            order,
            add_k,
            cache_lambda: lambda,
            cache_decay: decay,
        }
    }

    #[test]
    fn bigram_counts() {
        let m = CacheNGramModel::fit(&[doc(b"abab")], 256, params(2, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(m.ngram_count(b"a".map(u32::from).as_slice(), u32::from(b'b')), 2);
        assert_eq!(m.ngram_count(&[u32::from(b'b')], u32::from(b'a')), 1);
        assert_eq!(m.ngram_count(&[], u32::from(b'a')), 2);
        assert_eq!(m.tokens_seen(), 4);
    }

    #[test]
    fn unseen_context_with_add_one_is_uniform() {
        let m = CacheNGramModel::fit(&[doc(b"abab")], 256, params(2, 1.0, 0.0, 1.0)).unwrap();
        let table = m.full_next_distribution(&[u32::from(b'z')]).unwrap();
        for p in &table.probs {
            assert!((p - 1.0 / 256.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_prefix_gives_smoothed_unigram() {
        let m = CacheNGramModel::fit(&[doc(b"aab")], 256, params(3, 0.5, 0.4, 0.9)).unwrap();
        let table = m.full_next_distribution(&[]).unwrap();
        let denom = 3.0 + 0.5 * 256.0;
        assert!((table.probs[b'a' as usize] - 2.5 / denom).abs() < 1e-15);
        assert!((table.probs[b'b' as usize] - 1.5 / denom).abs() < 1e-15);
        assert!((table.probs[b'z' as usize] - 0.5 / denom).abs() < 1e-15);
    }

    #[test]
    fn zero_lambda_is_pure_ngram_and_order_one_is_context_free() {
        let corpus = doc(b"the cat sat on the mat");
        let m = CacheNGramModel::fit(std::slice::from_ref(&corpus), 256, params(1, 0.1, 0.0, 0.9)).unwrap();
        let seq: Vec<u32> = b"tatatt".iter().map(|&b| u32::from(b)).collect();
        let lp = m.logprob_slice(&seq, 1, seq.len()).unwrap();
        // 'a' at positions 1 and 3, 't' at 2, 4 and 5
        assert_eq!(lp[0], lp[2]);
        assert_eq!(lp[1], lp[3]);
        assert_eq!(lp[3], lp[4]);
    }

    #[test]
    fn cache_mixture_hand_evaluation() {
        // prefix "x y x y x", next "y": cache share of y is 2/5 with no decay.
        let m = CacheNGramModel::fit(&[doc(b"xyzzy")], 256, params(1, 1.0, 0.5, 1.0)).unwrap();
        let seq: Vec<u32> = b"xyxyxy".iter().map(|&b| u32::from(b)).collect();
        let lp = m.logprob_slice(&seq, 5, 6).unwrap();
        let p_unigram_y = (2.0 + 1.0) / (5.0 + 256.0);
        let expected = 0.5 * p_unigram_y + 0.5 * 0.4;
        assert!((lp[0].exp() - expected).abs() < 1e-15, "{} vs {expected}", lp[0].exp());
    }

    #[test]
    fn decayed_cache_weights() {
        let m = CacheNGramModel::fit(&[doc(b"ab")], 256, params(1, 1.0, 0.5, 0.5)).unwrap();
        // prefix "a b a", predict 'b': weights a: 1 + 0.25, b: 0.5; norm 1.75
        let seq: Vec<u32> = b"abab".iter().map(|&b| u32::from(b)).collect();
        let lp = m.logprob_slice(&seq, 3, 4).unwrap();
        let expected = 0.5 * (2.0 / 258.0) + 0.5 * (0.5 / 1.75);
        assert!((lp[0].exp() - expected).abs() < 1e-15);
    }

    #[test]
    fn suffix_window_changes_values() {
        let corpus = doc(b"abcabcabdabdxyzxyz");
        let m = CacheNGramModel::fit(&[corpus], 256, params(2, 0.1, 0.5, 0.99)).unwrap();
        let seq: Vec<u32> = b"qqqqqqqqabcabcqqqq".iter().map(|&b| u32::from(b)).collect();
        let full = m.logprob_slice(&seq, 10, seq.len()).unwrap();
        let suffix = &seq[8..];
        let windowed = m.logprob_slice(suffix, 2, suffix.len()).unwrap();
        assert_eq!(full.len(), windowed.len());
        // the trailing 'q's are far more likely when the earlier q-run is visible
        assert!(full[4] > windowed[4] + 0.1);
    }

    #[test]
    fn rejects_bad_requests() {
        let m = CacheNGramModel::fit(&[doc(b"ab")], 256, CacheParams::default()).unwrap();
        let seq = vec![1, 2, 3];
        assert!(m.logprob_slice(&seq, 0, 2).is_err());
        assert!(m.logprob_slice(&seq, 2, 2).is_err());
        assert!(m.logprob_slice(&seq, 1, 4).is_err());
        assert!(m.logprob_slice(&[1, 300], 1, 2).is_err());
    }

    #[test]
    fn fit_preconditions() {
        let d = doc(b"ab");
        assert!(CacheNGramModel::fit(std::iter::empty(), 256, CacheParams::default()).is_err());
        assert!(CacheNGramModel::fit([&d], 256, params(0, 1.0, 0.0, 1.0)).is_err());
        assert!(CacheNGramModel::fit([&d], 256, params(2, 0.0, 0.0, 1.0)).is_err());
        assert!(CacheNGramModel::fit([&d], 256, params(2, 1.0, 1.0, 1.0)).is_err());
        assert!(CacheNGramModel::fit([&d], 256, params(2, 1.0, 0.5, 0.0)).is_err());
        assert!(CacheNGramModel::fit([&d], 256, params(2, 1.0, 0.5, 1.5)).is_err());
    }

    #[test]
    fn model_file_round_trip_is_byte_stable() {
        let m = CacheNGramModel::fit(&[doc(b"mississippi river")], 256, params(3, 0.2, 0.3, 0.95)).unwrap();
        let mut a = Vec::new();
        m.write_to(&mut a).unwrap();
        let back = CacheNGramModel::read_from(a.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_file_version_is_checked() {
        let m = CacheNGramModel::fit(&[doc(b"ab")], 256, CacheParams::default()).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"format_version\":1", "\"format_version\":99");
        assert!(matches!(
            CacheNGramModel::read_from(text.as_bytes()),
            Err(ModelFileError::Format(_))
        ));
    }
}
