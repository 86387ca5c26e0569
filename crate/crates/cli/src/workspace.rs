//! Shared plumbing: output layout, corpus loading, backend selection.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use longfilter::backend::{CacheNGramModel, LogProbProvider};
use longfilter::config::{file_sha256, BackendKind, PipelineConfig};
use longfilter::corpus::{ingest, partition_by_length, PackedSequence, Span, TokenizedDoc, Tokenizer};
use longfilter_client::RemoteProvider;
use serde::{Deserialize, Serialize};

pub fn scores_path(config: &PipelineConfig) -> PathBuf {
    config.out_dir.join("scores.jsonl")
}

pub fn sequences_path(config: &PipelineConfig) -> PathBuf {
    config.out_dir.join("sequences.jsonl")
}

pub fn sidecar_dir(config: &PipelineConfig) -> PathBuf {
    config.out_dir.join("tokens")
}

pub fn sidecar_path(config: &PipelineConfig, seq_id: &str) -> PathBuf {
    sidecar_dir(config).join(format!("{seq_id}.json"))
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a half-written file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let name = path.file_name().ok_or_else(|| anyhow!("{} has no file name", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()
    };
    write().with_context(|| format!("cannot write {}", path.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

pub struct Corpus {
    pub docs: Vec<TokenizedDoc>,
    /// Records that could not be read or tokenized.
    pub failed: usize,
}

/// Ingests and tokenizes every configured input, in config order. Document
/// ids are qualified by source: `<source>/<id within the input>`.
pub fn load_corpus(config: &PipelineConfig, tokenizer: &Tokenizer) -> Result<Corpus> {
    config.check_inputs()?;
    let mut docs = Vec::new();
    let mut failed = 0;
    let mut seen = HashSet::new();
    for input in &config.corpus.inputs {
        let ingested = ingest(&input.path, input.format, &input.source)?;
        for skip in &ingested.skipped {
            tracing::warn!("skipped {}:{}: {}", skip.path.display(), skip.line, skip.reason);
        }
        failed += ingested.skipped.len();
        for mut doc in ingested.documents {
            doc.doc_id = format!("{}/{}", input.source, doc.doc_id);
            if !seen.insert(doc.doc_id.clone()) {
                bail!(
                    "document id {} occurs in more than one input; give overlapping inputs distinct sources",
                    doc.doc_id
                );
            }
            match tokenizer.tokenize(&doc) {
                Ok(t) => docs.push(t),
                Err(e) => {
                    tracing::warn!("skipped {e}");
                    failed += 1;
                }
            }
        }
    }
    if docs.is_empty() {
        bail!("the corpus is empty: no input produced a document");
    }
    Ok(Corpus { docs, failed })
}

/// Indices of long and short documents, by per-source length threshold.
/// Both lists keep corpus order.
pub fn partition(config: &PipelineConfig, docs: &[TokenizedDoc]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_source: BTreeMap<&str, Vec<&TokenizedDoc>> = BTreeMap::new();
    for d in docs {
        by_source.entry(&d.source).or_default().push(d);
    }
    let mut long_ids = HashSet::new();
    for (source, group) in by_source {
        let part = partition_by_length(group, config.threshold_for(source))?;
        long_ids.extend(part.long_docs);
    }
    Ok((0..docs.len()).partition(|&i| long_ids.contains(&docs[i].doc_id)))
}

/// Opens the configured backend. Returns the provider and, for the built-in
/// backend, the model file hash that enters the config digest.
pub fn open_provider(config: &PipelineConfig, tokenizer: &Tokenizer) -> Result<(Box<dyn LogProbProvider>, Option<String>)> {
    let (provider, sha): (Box<dyn LogProbProvider>, _) = match config.backend.kind {
        BackendKind::Builtin => {
            let path = config.model_path();
            let sha = model_sha256(config)?;
            let model = CacheNGramModel::load(&path).with_context(|| format!("cannot load model {}", path.display()))?;
            (Box::new(model), Some(sha))
        }
        BackendKind::Remote => {
            let endpoint = config.backend.endpoint.as_deref().expect("validated");
            let timeout = Duration::from_secs_f64(config.backend.timeout_secs);
            let remote = RemoteProvider::connect(endpoint, timeout, config.backend.retries)
                .with_context(|| format!("cannot reach logprob server at {endpoint}"))?;
            (Box::new(remote), None)
        }
    };
    let info = provider.info();
    if info.tokenizer_id != tokenizer.id() || info.vocab_size != tokenizer.vocab_size() {
        bail!(
            "backend uses tokenizer {} with {} tokens but the config uses {} with {}",
            info.tokenizer_id,
            info.vocab_size,
            tokenizer.id(),
            tokenizer.vocab_size()
        );
    }
    Ok((provider, sha))
}

pub fn model_sha256(config: &PipelineConfig) -> Result<String> {
    let path = config.model_path();
    if !path.exists() {
        bail!("model file {} does not exist; run `longfilter fit` first", path.display());
    }
    file_sha256(&path).with_context(|| format!("cannot read {}", path.display()))
}

/// Digest of the effective configuration, including the model file when the
/// built-in backend is used.
pub fn config_digest(config: &PipelineConfig) -> Result<String> {
    let sha = match config.backend.kind {
        BackendKind::Builtin => Some(model_sha256(config)?),
        BackendKind::Remote => None,
    };
    Ok(config.digest(sha.as_deref()))
}

/// Records of `sequences.jsonl`: a header, then one layout line per
/// packed sequence (token ids are not repeated here).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum SequenceLine {
    Header {
        n_sequences: usize,
        pack_len: usize,
        dropped_tokens: usize,
        config_digest: String,
        tool_version: String,
    },
    Sequence {
        seq_id: String,
        n_tokens: usize,
        spans: Vec<Span>,
    },
}

pub fn sequence_lines(seqs: &[PackedSequence], pack_len: usize, dropped: usize, digest: &str) -> Vec<SequenceLine> {
    let mut lines = vec![SequenceLine::Header {
        n_sequences: seqs.len(),
        pack_len,
        dropped_tokens: dropped,
        config_digest: digest.to_string(),
        tool_version: longfilter::TOOL_VERSION.to_string(),
    }];
    lines.extend(seqs.iter().map(|s| SequenceLine::Sequence {
        seq_id: s.seq_id.clone(),
        n_tokens: s.len(),
        spans: s.spans.clone(),
    }));
    lines
}

/// Packs the long documents into sequences. Returns the sequences and the
/// number of trailing tokens that did not fill a sequence.
pub fn pack_long_docs(config: &PipelineConfig, corpus: &Corpus) -> Result<(Vec<PackedSequence>, usize)> {
    let (long, _) = partition(config, &corpus.docs)?;
    let mut packer = longfilter::corpus::Packer::new(config.corpus.pack_len)?;
    let mut seqs = Vec::new();
    for &i in &long {
        seqs.extend(packer.push(&corpus.docs[i]));
    }
    if seqs.is_empty() {
        let tokens: usize = long.iter().map(|&i| corpus.docs[i].tokens.len()).sum();
        bail!(
            "nothing to score: {} documents reach their length threshold, {tokens} tokens in total, \
             less than one sequence of pack_len {}",
            long.len(),
            config.corpus.pack_len
        );
    }
    Ok((seqs, packer.remainder()))
}
