//! Document ingestion, tokenization, length partitioning and packing.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("tokenizer configuration: {0}")]
    Config(String),
    #[error("document {doc_id}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One raw sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: Vec<u8>,
    pub source: String,
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub source: String,
    pub tokens: Vec<u32>,
    pub tokenizer_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// Every non-empty line of every file is a document.
    LinesOfText,
    /// One JSON object per line with a required `text` field and an
    /// optional `meta` object.
    Structured,
    /// Every file is a document.
    RawFiles,
}

/// A record that could not be turned into a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub path: PathBuf,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub documents: Vec<Document>,
    pub skipped: Vec<RecordError>,
}

#[derive(Deserialize)]
struct StructuredRecord {
    text: String,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

/// Reads every document under `path` (a file or a directory walked
/// recursively).
///
/// Files are visited in lexicographic order of their path relative to
/// `path`; documents keep record order inside a file. Document ids are
/// `<relative path>:<line>` for line based formats and `<relative path>` for
/// raw files, so they do not depend on which records were skipped.
pub fn ingest(path: &Path, format: InputFormat, source: &str) -> Result<Ingested, CorpusError> {
    let meta = fs::metadata(path).map_err(|e| CorpusError::io(path, e))?;
    let files: Vec<(PathBuf, String)> = if meta.is_dir() {
        let mut files = Vec::new();
        for entry in WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(|e| {
                let p = e.path().unwrap_or(path).to_path_buf();
                CorpusError::Io {
                    path: p,
                    source: e.into(),
                }
            })?;
            if entry.file_type().is_file() {
                let rel = entry
                    .path()
                    .strip_prefix(path)
                    .unwrap_or(entry.path())
                    .to_string_lossy()
                    .replace('\\', "/");
                files.push((entry.path().to_path_buf(), rel));
            }
        }
        files.sort_by(|a, b| a.1.cmp(&b.1));
        files
    } else {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.to_string_lossy().into_owned());
        vec![(path.to_path_buf(), name)]
    };

    let per_file: Vec<Result<Ingested, CorpusError>> = files
        .par_iter()
        .map(|(file, rel)| ingest_file(file, rel, format, source))
        .collect();

    let mut out = Ingested::default();
    for part in per_file {
        let part = part?;
        out.documents.extend(part.documents);
        out.skipped.extend(part.skipped);
    }
    Ok(out)
}

fn ingest_file(
    file: &Path,
    rel: &str,
    format: InputFormat,
    source: &str,
) -> Result<Ingested, CorpusError> {
    let bytes = fs::read(file).map_err(|e| CorpusError::io(file, e))?;
    let mut out = Ingested::default();
    let doc = |doc_id: String, text: Vec<u8>, meta: BTreeMap<String, String>| Document {
        doc_id,
        text,
        source: source.to_string(),
        meta,
    };
    match format {
        InputFormat::RawFiles => {
            if !bytes.is_empty() {
                out.documents.push(doc(rel.to_string(), bytes, BTreeMap::new()));
            }
        }
        InputFormat::LinesOfText => {
            for (idx, line) in bytes.split(|&b| b == b'\n').enumerate() {
                let line = line.strip_suffix(b"\r").unwrap_or(line);
                if !line.is_empty() {
                    out.documents
                        .push(doc(format!("{rel}:{}", idx + 1), line.to_vec(), BTreeMap::new()));
                }
            }
        }
        InputFormat::Structured => {
            for (idx, line) in bytes.split(|&b| b == b'\n').enumerate() {
                let line_no = idx + 1;
                if line.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                let record: Result<StructuredRecord, String> =
                    serde_json::from_slice(line).map_err(|e| e.to_string());
                match record {
                    Ok(r) if r.text.is_empty() => out.skipped.push(RecordError {
                        path: file.to_path_buf(),
                        line: line_no,
                        reason: "empty text".into(),
                    }),
                    Ok(r) => {
                        let meta = r
                            .meta
                            .into_iter()
                            .map(|(k, v)| match v {
                                serde_json::Value::String(s) => (k, s),
                                other => (k, other.to_string()),
                            })
                            .collect();
                        out.documents
                            .push(doc(format!("{rel}:{line_no}"), r.text.into_bytes(), meta));
                    }
                    Err(reason) => out.skipped.push(RecordError {
                        path: file.to_path_buf(),
                        line: line_no,
                        reason,
                    }),
                }
            }
        }
    }
    Ok(out)
}

/// Writes documents in the structured input format.
pub fn write_structured<W: Write>(mut w: W, docs: &[Document]) -> io::Result<()> {
    for d in docs {
        let record = serde_json::json!({
            "text": String::from_utf8_lossy(&d.text),
            "meta": d.meta,
        });
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Greedy longest-match tokenizer over an explicit vocabulary.
#[derive(Debug, Clone)]
pub struct VocabTokenizer {
    id: String,
    pieces: Vec<Vec<u8>>,
    lookup: HashMap<Vec<u8>, u32>,
    max_piece_len: usize,
}

impl VocabTokenizer {
    /// Loads a vocabulary file: one JSON string per line, token id = line
    /// index.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = fs::File::open(path)
            .map_err(|e| CorpusError::Config(format!("vocabulary {}: {e}", path.display())))?;
        let mut pieces = Vec::new();
        let mut hasher = Sha256::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line
                .map_err(|e| CorpusError::Config(format!("vocabulary {}: {e}", path.display())))?;
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            let piece: String = serde_json::from_str(&line).map_err(|e| {
                CorpusError::Config(format!("vocabulary {} line {}: {e}", path.display(), idx + 1))
            })?;
            pieces.push(piece.into_bytes());
        }
        let digest = hex::encode(hasher.finalize());
        Self::from_pieces(format!("vocab-{}", &digest[..12]), pieces)
    }

    pub fn from_pieces(id: String, pieces: Vec<Vec<u8>>) -> Result<Self, CorpusError> {
        if pieces.is_empty() || pieces.len() > 65536 {
            return Err(CorpusError::Config(format!(
                "vocabulary size must be in 1..=65536, got {}",
                pieces.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(CorpusError::Config(format!("empty vocabulary entry at {i}")));
            }
            if lookup.insert(p.clone(), i as u32).is_some() {
                return Err(CorpusError::Config(format!("duplicate vocabulary entry at {i}")));
            }
        }
        let max_piece_len = pieces.iter().map(Vec::len).max().unwrap_or(1);
        Ok(Self {
            id,
            pieces,
            lookup,
            max_piece_len,
        })
    }

    fn encode(&self, doc_id: &str, text: &[u8]) -> Result<Vec<u32>, CorpusError> {
        let mut tokens = Vec::with_capacity(text.len());
        let mut pos = 0;
        while pos < text.len() {
            let longest = self.max_piece_len.min(text.len() - pos);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.lookup.get(&text[pos..pos + len]).map(|&id| (id, len)));
            match hit {
                Some((id, len)) => {
                    tokens.push(id);
                    pos += len;
                }
                None => {
                    return Err(CorpusError::InvalidDocument {
                        doc_id: doc_id.to_string(),
                        reason: format!("byte {:#04x} at offset {pos} not covered by vocabulary", text[pos]),
                    })
                }
            }
        }
        Ok(tokens)
    }
}

#[derive(Debug, Clone, Default)]
pub enum Tokenizer {
    /// Token id = byte value, vocabulary of 256.
    #[default]
    Byte,
    Vocab(VocabTokenizer),
}

pub const BYTE_TOKENIZER_ID: &str = "byte";

impl Tokenizer {
    pub fn id(&self) -> &str {
        match self {
            Tokenizer::Byte => BYTE_TOKENIZER_ID,
            Tokenizer::Vocab(v) => &v.id,
        }
    }

    pub fn vocab_size(&self) -> u32 {
        match self {
            Tokenizer::Byte => 256,
            Tokenizer::Vocab(v) => v.pieces.len() as u32,
        }
    }

    pub fn tokenize(&self, doc: &Document) -> Result<TokenizedDoc, CorpusError> {
        if doc.text.is_empty() {
            return Err(CorpusError::InvalidDocument {
                doc_id: doc.doc_id.clone(),
                reason: "empty text".into(),
            });
        }
        let tokens = match self {
            Tokenizer::Byte => doc.text.iter().map(|&b| u32::from(b)).collect(),
            Tokenizer::Vocab(v) => v.encode(&doc.doc_id, &doc.text)?,
        };
        Ok(TokenizedDoc {
            doc_id: doc.doc_id.clone(),
            source: doc.source.clone(),
            tokens,
            tokenizer_id: self.id().to_string(),
        })
    }

    pub fn detokenize(&self, tokens: &[u32]) -> Result<Vec<u8>, CorpusError> {
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            match self {
                Tokenizer::Byte => {
                    let b = u8::try_from(t)
                        .map_err(|_| CorpusError::Argument(format!("token {t} outside byte range")))?;
                    out.push(b);
                }
                Tokenizer::Vocab(v) => {
                    let piece = v.pieces.get(t as usize).ok_or_else(|| {
                        CorpusError::Argument(format!("token {t} outside vocabulary"))
                    })?;
                    out.extend_from_slice(piece);
                }
            }
        }
        Ok(out)
    }

    /// Text of a single token, for display.
    pub fn piece(&self, token: u32) -> Vec<u8> {
        self.detokenize(&[token]).unwrap_or_default()
    }
}

/// Documents split by token count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthPartition {
    pub long_docs: Vec<String>,
    pub short_docs: Vec<String>,
    pub threshold_tokens: usize,
}

pub fn partition_by_length<'a, I>(docs: I, threshold_tokens: usize) -> Result<LengthPartition, CorpusError>
where
    I: IntoIterator<Item = &'a TokenizedDoc>,
{
    if threshold_tokens == 0 {
        return Err(CorpusError::Argument("length threshold must be >= 1".into()));
    }
    let mut part = LengthPartition {
        threshold_tokens,
        ..Default::default()
    };
    for d in docs {
        if d.tokens.len() >= threshold_tokens {
            part.long_docs.push(d.doc_id.clone());
        } else {
            part.short_docs.push(d.doc_id.clone());
        }
    }
    Ok(part)
}

/// Region `[start, end)` of a packed sequence contributed by one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub seq_id: String,
    pub tokens: Vec<u32>,
    pub spans: Vec<Span>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Start offset of the span containing `pos`.
    pub fn span_start(&self, pos: usize) -> usize {
        let idx = self.spans.partition_point(|s| s.end <= pos);
        self.spans.get(idx).map_or(0, |s| s.start)
    }
}

pub fn seq_id_for(index: usize) -> String {
    format!("seq-{index:08}")
}

/// Incremental packer: feeds documents in order, emits full sequences.
#[derive(Debug)]
pub struct Packer {
    pack_len: usize,
    next_index: usize,
    tokens: Vec<u32>,
    spans: Vec<Span>,
}

impl Packer {
    pub fn new(pack_len: usize) -> Result<Self, CorpusError> {
        if pack_len < 2 {
            return Err(CorpusError::Argument(format!("pack_len must be >= 2, got {pack_len}")));
        }
        Ok(Self {
            pack_len,
            next_index: 0,
            tokens: Vec::with_capacity(pack_len),
            spans: Vec::new(),
        })
    }

    pub fn push(&mut self, doc: &TokenizedDoc) -> Vec<PackedSequence> {
        let mut done = Vec::new();
        let mut rest = doc.tokens.as_slice();
        while !rest.is_empty() {
            let room = self.pack_len - self.tokens.len();
            let take = room.min(rest.len());
            let start = self.tokens.len();
            self.tokens.extend_from_slice(&rest[..take]);
            self.spans.push(Span {
                doc_id: doc.doc_id.clone(),
                start,
                end: start + take,
            });
            rest = &rest[take..];
            if self.tokens.len() == self.pack_len {
                done.push(PackedSequence {
                    seq_id: seq_id_for(self.next_index),
                    tokens: std::mem::replace(&mut self.tokens, Vec::with_capacity(self.pack_len)),
                    spans: std::mem::take(&mut self.spans),
                });
                self.next_index += 1;
            }
        }
        done
    }

    /// Number of buffered tokens that will be dropped if no more input
    /// arrives.
    pub fn remainder(&self) -> usize {
        self.tokens.len()
    }
}

/// Concatenates documents in order and cuts the stream into sequences of
/// exactly `pack_len` tokens. The trailing partial sequence is dropped.
pub fn pack<'a, I>(docs: I, pack_len: usize) -> Result<Vec<PackedSequence>, CorpusError>
where
    I: IntoIterator<Item = &'a TokenizedDoc>,
{
    let mut packer = Packer::new(pack_len)?;
    let mut out = Vec::new();
    for d in docs {
        out.extend(packer.push(d));
    }
    Ok(out)
}

pub fn write_packed<W: Write>(mut w: W, seqs: &[PackedSequence]) -> io::Result<()> {
    for s in seqs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_packed<R: BufRead>(r: R) -> io::Result<Vec<PackedSequence>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(out)
}
