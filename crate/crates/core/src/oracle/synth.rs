//! Synthetic corpora with known dependency structure.
//!
//! - `markov`: samples from a fixed order-k Markov chain. Nothing beyond the
//!   last k tokens carries information, so long context should not help.
//! - `recall`: key/value pairs are defined up front and restated verbatim
//!   later, always further back than the short window reaches.
//! - `repeat`: a short random motif tiled end to end; every chunk already
//!   sees the whole pattern.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;

use super::OracleError;

/// Symbols used by markov documents.
pub const MARKOV_SYMBOLS: &[u8] = b"abcdefghijklmnop";
/// Symbols used by recall and repeat documents, disjoint from
/// [`MARKOV_SYMBOLS`].
pub const RECALL_SYMBOLS: &[u8] = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZqrstuvwxyz!#$%&()*+,-./:;<=>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SynthSpec {
    Markov(MarkovSpec),
    Recall(RecallSpec),
    Repeat(RepeatSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSpec {
    pub length: usize,
    pub order: usize,
    pub transition_seed: u64,
    pub alphabet_size: usize,
    /// Dirichlet concentration of each transition row; small values give
    /// peaked, predictable rows.
    pub concentration: f64,
}

impl Default for MarkovSpec {
    fn default() -> Self {
        Self {
            length: 8192,
            order: 2,
            transition_seed: 1,
            alphabet_size: 16,
            concentration: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSpec {
    pub length: usize,
    pub n_keys: usize,
    pub key_len: usize,
    pub value_len: usize,
    /// Distinct symbols each value is drawn from; values of different keys
    /// use disjoint symbol sets.
    pub value_symbols: usize,
    /// Position of the first query; the gap after the definitions is filler.
    pub first_query_at: usize,
    /// Filler tokens before each later query.
    pub filler_len: usize,
    /// Documents use the first `2^alphabet_bits` recall symbols. Each document
    /// reserves `value_symbols` of them per key for values; filler and keys
    /// are uniform over the rest. Which symbols are reserved is random per
    /// document, so across a corpus all parts share one unigram distribution.
    pub alphabet_bits: u32,
    /// Every query must sit more than this many tokens after the previous
    /// occurrence of its pair.
    pub short_len: usize,
}

impl Default for RecallSpec {
    fn default() -> Self {
        Self {
            length: 8192,
            n_keys: 6,
            key_len: 4,
            value_len: 24,
            value_symbols: 6,
            first_query_at: 1024,
            filler_len: 64,
            alphabet_bits: 6,
            short_len: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSpec {
    pub length: usize,
    pub period: usize,
    /// Distinct symbols the motif is drawn from.
    pub motif_symbols: usize,
    /// Chunk length the period must stay below.
    pub chunk_len: usize,
}

impl Default for RepeatSpec {
    fn default() -> Self {
        Self {
            length: 8192,
            period: 64,
            motif_symbols: 64,
            chunk_len: 512,
        }
    }
}

impl SynthSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SynthSpec::Markov(_) => "markov",
            SynthSpec::Recall(_) => "recall",
            SynthSpec::Repeat(_) => "repeat",
        }
    }

    pub fn length(&self) -> usize {
        match self {
            SynthSpec::Markov(s) => s.length,
            SynthSpec::Recall(s) => s.length,
            SynthSpec::Repeat(s) => s.length,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let fail = |msg: String| Err(OracleError::Argument(msg));
        if self.length() == 0 {
            return fail("length must be >= 1".into());
        }
        match self {
            SynthSpec::Markov(s) => {
                if !(1..=4).contains(&s.order) {
                    return fail(format!("markov order must be in 1..=4, got {}", s.order));
                }
                if !(2..=MARKOV_SYMBOLS.len()).contains(&s.alphabet_size) {
                    return fail(format!(
                        "markov alphabet_size must be in 2..={}, got {}",
                        MARKOV_SYMBOLS.len(),
                        s.alphabet_size
                    ));
                }
                if !(s.concentration > 0.0 && s.concentration.is_finite()) {
                    return fail(format!("concentration must be > 0, got {}", s.concentration));
                }
            }
            SynthSpec::Recall(s) => {
                recall_layout(s)?;
            }
            SynthSpec::Repeat(s) => {
                if !(1..=RECALL_SYMBOLS.len()).contains(&s.motif_symbols) {
                    return fail(format!(
                        "motif_symbols must be in 1..={}, got {}",
                        RECALL_SYMBOLS.len(),
                        s.motif_symbols
                    ));
                }
                if s.period == 0 || s.period >= s.chunk_len {
                    return fail(format!(
                        "repeat period must be in 1..chunk_len ({}), got {}",
                        s.chunk_len, s.period
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SegmentKind {
    Definition,
    Filler,
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Segment {
    pub kind: SegmentKind,
    pub key: usize,
    pub start: usize,
    pub end: usize,
}

/// Token layout of a recall document (independent of the seed): all
/// definitions, then repeated `filler, key, value` blocks cycling over keys.
pub(crate) fn recall_layout(s: &RecallSpec) -> Result<Vec<Segment>, OracleError> {
    let fail = |msg: String| Err(OracleError::Argument(msg));
    if !(1..=6).contains(&s.alphabet_bits) {
        return fail(format!("alphabet_bits must be in 1..=6, got {}", s.alphabet_bits));
    }
    let alphabet = 1usize << s.alphabet_bits;
    if s.n_keys == 0 || s.key_len == 0 || s.value_len == 0 || s.value_symbols == 0 {
        return fail("n_keys, key_len, value_len and value_symbols must be >= 1".into());
    }
    if s.n_keys * s.value_symbols >= alphabet {
        return fail(format!(
            "{} keys x {} value symbols leave no filler symbols in the {alphabet}-symbol alphabet",
            s.n_keys, s.value_symbols
        ));
    }
    let filler = (alphabet - s.n_keys * s.value_symbols) as f64;
    if filler.powi(s.key_len.min(64) as i32) < s.n_keys as f64 {
        return fail(format!("{} filler symbols cannot form {} distinct keys of length {}", filler, s.n_keys, s.key_len));
    }
    let pair = s.key_len + s.value_len;
    if s.n_keys * pair > s.length {
        return fail(format!("definitions need {} tokens but length is {}", s.n_keys * pair, s.length));
    }
    let mut segments = Vec::new();
    let mut last_end = vec![0usize; s.n_keys];
    let mut pos = 0;
    for (key, end) in last_end.iter_mut().enumerate() {
        segments.push(Segment {
            kind: SegmentKind::Definition,
            key,
            start: pos,
            end: pos + pair,
        });
        pos += pair;
        *end = pos;
    }
    if s.first_query_at < pos {
        return fail(format!("first_query_at {} falls inside the definitions (which end at {pos})", s.first_query_at));
    }
    let mut key = 0;
    let mut first = true;
    while pos < s.length {
        let gap = if first { s.first_query_at - pos } else { s.filler_len };
        first = false;
        let filler_end = (pos + gap).min(s.length);
        if filler_end > pos {
            segments.push(Segment {
                kind: SegmentKind::Filler,
                key,
                start: pos,
                end: filler_end,
            });
        }
        pos = filler_end;
        if pos >= s.length {
            break;
        }
        if pos - last_end[key] <= s.short_len {
            return fail(format!(
                "query for key {key} at {pos} is only {} tokens after its previous occurrence; \
                 must exceed short_len {}",
                pos - last_end[key],
                s.short_len
            ));
        }
        let end = (pos + pair).min(s.length);
        segments.push(Segment {
            kind: SegmentKind::Query,
            key,
            start: pos,
            end,
        });
        last_end[key] = end;
        pos = end;
        key = (key + 1) % s.n_keys;
    }
    Ok(segments)
}

/// Row-stochastic transition table of an order-k chain; row index is the
/// base-`alphabet_size` number formed by the previous k symbols.
pub(crate) fn markov_table(s: &MarkovSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.transition_seed);
    let gamma = Gamma::new(s.concentration, 1.0).expect("validated concentration");
    let rows = s.alphabet_size.pow(s.order as u32);
    (0..rows)
        .map(|_| {
            let raw: Vec<f64> = (0..s.alphabet_size)
                .map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE))
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        })
        .collect()
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn markov_doc<R: Rng + ?Sized>(s: &MarkovSpec, table: &[Vec<f64>], rng: &mut R) -> Vec<u8> {
    let mut idx: Vec<usize> = Vec::with_capacity(s.length);
    for i in 0..s.length {
        let next = if i < s.order {
            rng.random_range(0..s.alphabet_size)
        } else {
            let row = idx[i - s.order..i].iter().fold(0, |acc, &x| acc * s.alphabet_size + x);
            sample_index(&table[row], rng)
        };
        idx.push(next);
    }
    idx.into_iter().map(|i| MARKOV_SYMBOLS[i]).collect()
}

struct RecallDoc {
    text: Vec<u8>,
    keys: Vec<Vec<u8>>,
    query_spans: Vec<(usize, usize)>,
}

fn recall_doc<R: Rng + ?Sized>(s: &RecallSpec, layout: &[Segment], rng: &mut R) -> RecallDoc {
    let alphabet = &RECALL_SYMBOLS[..1usize << s.alphabet_bits];
    let mut shuffled = alphabet.to_vec();
    shuffled.shuffle(rng);
    let (value_pool, filler) = shuffled.split_at(s.n_keys * s.value_symbols);
    let mut keys: Vec<Vec<u8>> = Vec::with_capacity(s.n_keys);
    while keys.len() < s.n_keys {
        let key: Vec<u8> = (0..s.key_len).map(|_| filler[rng.random_range(0..filler.len())]).collect();
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let values: Vec<Vec<u8>> = (0..s.n_keys)
        .map(|k| {
            let symbols = &value_pool[k * s.value_symbols..(k + 1) * s.value_symbols];
            (0..s.value_len).map(|_| symbols[rng.random_range(0..symbols.len())]).collect()
        })
        .collect();

    let mut text = Vec::with_capacity(s.length);
    let mut query_spans = Vec::new();
    for seg in layout {
        let want = seg.end - seg.start;
        match seg.kind {
            SegmentKind::Filler => {
                text.extend((0..want).map(|_| filler[rng.random_range(0..filler.len())]));
            }
            SegmentKind::Definition | SegmentKind::Query => {
                let pair: Vec<u8> = keys[seg.key].iter().chain(&values[seg.key]).copied().collect();
                text.extend_from_slice(&pair[..want]);
                if seg.kind == SegmentKind::Query {
                    query_spans.push((seg.start, seg.end));
                }
            }
        }
    }
    RecallDoc { text, keys, query_spans }
}

fn repeat_doc<R: Rng + ?Sized>(s: &RepeatSpec, rng: &mut R) -> Vec<u8> {
    let mut symbols = RECALL_SYMBOLS.to_vec();
    symbols.shuffle(rng);
    symbols.truncate(s.motif_symbols);
    let motif: Vec<u8> = (0..s.period)
        .map(|_| symbols[rng.random_range(0..symbols.len())])
        .collect();
    (0..s.length).map(|i| motif[i % s.period]).collect()
}

/// Generates `count` documents. Output depends only on `(spec, seed)`.
pub fn generate(spec: &SynthSpec, seed: u64, count: usize) -> Result<Vec<Document>, OracleError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = spec.kind_name();
    let spec_json = serde_json::to_string(spec).expect("spec serializes");
    let markov = match spec {
        SynthSpec::Markov(s) => Some(markov_table(s)),
        _ => None,
    };
    let layout = match spec {
        SynthSpec::Recall(s) => recall_layout(s)?,
        _ => Vec::new(),
    };
    let mut docs = Vec::with_capacity(count);
    for index in 0..count {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), kind.to_string());
        meta.insert("seed".to_string(), seed.to_string());
        meta.insert("index".to_string(), index.to_string());
        meta.insert("spec".to_string(), spec_json.clone());
        let text = match spec {
            SynthSpec::Markov(s) => markov_doc(s, markov.as_deref().expect("table"), &mut rng),
            SynthSpec::Recall(s) => {
                let doc = recall_doc(s, &layout, &mut rng);
                let keys: Vec<String> = doc.keys.iter().map(|k| String::from_utf8_lossy(k).into_owned()).collect();
                meta.insert("keys".to_string(), serde_json::to_string(&keys).expect("keys"));
                meta.insert(
                    "query_spans".to_string(),
                    serde_json::to_string(&doc.query_spans).expect("spans"),
                );
                doc.text
            }
            SynthSpec::Repeat(s) => repeat_doc(s, &mut rng),
        };
        docs.push(Document {
            doc_id: format!("synth-{kind}-s{seed}-{index:05}"),
            text,
            source: format!("synth-{kind}"),
            meta,
        });
    }
    Ok(docs)
}
