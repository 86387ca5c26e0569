//! Pipeline configuration file (TOML) and its digest.
//!
//! Relative paths in a config file are resolved against the directory that
//! contains it. Every output artifact carries [`PipelineConfig::digest`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::CacheParams;
use crate::corpus::{InputFormat, Tokenizer, VocabTokenizer};
use crate::scorer::ScoringConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Length threshold for sources without an entry in `[partition.thresholds]`.
pub const DEFAULT_LENGTH_THRESHOLD: usize = 32768;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub scoring: ScoringSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub selection: SelectionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: InputFormat,
    /// Source tag; selects the length threshold.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    /// `"byte"` or a path to a vocabulary file (one JSON string per line).
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    #[serde(default = "default_pack_len")]
    pub pack_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(default = "default_threshold")]
    pub default_threshold: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_add_k")]
    pub add_k: f64,
    #[serde(default = "default_lambda")]
    pub cache_lambda: f64,
    #[serde(default = "default_decay")]
    pub cache_decay: f64,
    /// Model file; defaults to `<out_dir>/model.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringSection {
    #[serde(default = "default_short_len")]
    pub short_len: usize,
    #[serde(default = "default_long_len")]
    pub long_len: usize,
    /// Defaults to `short_len`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_len: Option<usize>,
    /// Defaults to half the chunk length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<usize>,
    #[serde(default)]
    pub mask_doc_boundaries: bool,
    #[serde(default)]
    pub clip_negative: bool,
    /// Write per-token sidecars under `<out_dir>/tokens/`.
    #[serde(default)]
    pub sidecars: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Builtin,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default = "default_backend")]
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    #[serde(default = "default_keep")]
    pub keep_fraction: f64,
    #[serde(default = "default_long_fraction")]
    pub long_fraction: f64,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_format() -> InputFormat {
    InputFormat::Structured
}
fn default_tokenizer() -> String {
    "byte".into()
}
fn default_pack_len() -> usize {
    65536
}
fn default_threshold() -> usize {
    DEFAULT_LENGTH_THRESHOLD
}
fn default_thresholds() -> BTreeMap<String, usize> {
    [("arxiv", 16384), ("book", 65536), ("commoncrawl", 32768)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}
fn default_order() -> usize {
    CacheParams::default().order
}
fn default_add_k() -> f64 {
    CacheParams::default().add_k
}
fn default_lambda() -> f64 {
    CacheParams::default().cache_lambda
}
fn default_decay() -> f64 {
    CacheParams::default().cache_decay
}
fn default_short_len() -> usize {
    4096
}
fn default_long_len() -> usize {
    65536
}
fn default_backend() -> BackendKind {
    BackendKind::Builtin
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_keep() -> f64 {
    0.2
}
fn default_long_fraction() -> f64 {
    0.8
}

macro_rules! default_from_serde {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                toml::from_str("").expect("all fields have defaults")
            }
        }
    )*};
}
default_from_serde!(CorpusSection, PartitionSection, ModelSection, ScoringSection, BackendSection, SelectionSection);

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str(&format!("schema_version = {SCHEMA_VERSION}")).expect("defaults parse")
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    /// Parses a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text, path)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        for input in &mut self.corpus.inputs {
            input.path = join(&input.path);
        }
        if self.corpus.tokenizer != "byte" {
            self.corpus.tokenizer = join(Path::new(&self.corpus.tokenizer)).to_string_lossy().into_owned();
        }
        self.out_dir = join(&self.out_dir);
        if let Some(p) = &self.model.path {
            self.model.path = Some(join(p));
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn cache_params(&self) -> CacheParams {
        CacheParams {
            order: self.model.order,
            add_k: self.model.add_k,
            cache_lambda: self.model.cache_lambda,
            cache_decay: self.model.cache_decay,
        }
    }

    pub fn scoring_config(&self) -> ScoringConfig {
        let s = &self.scoring;
        let chunk_len = s.chunk_len.unwrap_or(s.short_len);
        ScoringConfig {
            short_len: s.short_len,
            long_len: s.long_len,
            chunk_len,
            overlap: s.overlap.unwrap_or(chunk_len / 2),
            mask_doc_boundaries: s.mask_doc_boundaries,
            clip_negative: s.clip_negative,
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.path.clone().unwrap_or_else(|| self.out_dir.join("model.json"))
    }

    pub fn threshold_for(&self, source: &str) -> usize {
        self.partition
            .thresholds
            .get(source)
            .copied()
            .unwrap_or(self.partition.default_threshold)
    }

    pub fn tokenizer(&self) -> Result<Tokenizer, ConfigError> {
        if self.corpus.tokenizer == "byte" {
            Ok(Tokenizer::Byte)
        } else {
            VocabTokenizer::load(Path::new(&self.corpus.tokenizer))
                .map(Tokenizer::Vocab)
                .map_err(|e| ConfigError::Invalid(e.to_string()))
        }
    }

    /// Checks value ranges. File existence is checked separately by
    /// [`PipelineConfig::check_inputs`], since not every command reads the
    /// corpus.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.workers == 0 {
            return invalid("workers must be >= 1".into());
        }
        if self.corpus.pack_len < 2 {
            return invalid(format!("pack_len must be >= 2, got {}", self.corpus.pack_len));
        }
        self.cache_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("[model] {e}")))?;
        self.scoring_config()
            .validate(self.corpus.pack_len)
            .map_err(|e| ConfigError::Invalid(format!("[scoring] {e}")))?;
        let sel = &self.selection;
        if !(sel.keep_fraction > 0.0 && sel.keep_fraction <= 1.0) {
            return invalid(format!("keep_fraction must be in (0, 1], got {}", sel.keep_fraction));
        }
        if !(0.0..=1.0).contains(&sel.long_fraction) {
            return invalid(format!("long_fraction must be in [0, 1], got {}", sel.long_fraction));
        }
        if self.partition.default_threshold == 0 || self.partition.thresholds.values().any(|&t| t == 0) {
            return invalid("length thresholds must be >= 1".into());
        }
        match self.backend.kind {
            BackendKind::Remote if self.backend.endpoint.is_none() => {
                return invalid("backend.kind = \"remote\" requires backend.endpoint".into());
            }
            _ => {}
        }
        if !(self.backend.timeout_secs > 0.0 && self.backend.timeout_secs.is_finite()) {
            return invalid(format!("timeout_secs must be > 0, got {}", self.backend.timeout_secs));
        }
        Ok(())
    }

    pub fn check_inputs(&self) -> Result<(), ConfigError> {
        if self.corpus.inputs.is_empty() {
            return Err(ConfigError::Invalid("[corpus] lists no inputs".into()));
        }
        for input in &self.corpus.inputs {
            if !input.path.exists() {
                return Err(ConfigError::Invalid(format!(
                    "corpus input {} does not exist",
                    input.path.display()
                )));
            }
        }
        if self.corpus.tokenizer != "byte" && !Path::new(&self.corpus.tokenizer).exists() {
            return Err(ConfigError::Invalid(format!(
                "tokenizer vocabulary {} does not exist",
                self.corpus.tokenizer
            )));
        }
        Ok(())
    }

    /// Hex sha256 over the settings that can change results. `workers`,
    /// `out_dir`, the model path, sidecar output and remote timeouts are
    /// left out; the model file enters through its content hash.
    pub fn digest(&self, model_sha256: Option<&str>) -> String {
        let view = serde_json::json!({
            "schema_version": self.schema_version,
            "seed": self.seed,
            "corpus": {
                "inputs": self.corpus.inputs,
                "tokenizer": self.corpus.tokenizer,
                "pack_len": self.corpus.pack_len,
            },
            "partition": self.partition,
            "model": self.cache_params(),
            "model_sha256": model_sha256,
            "scoring": self.scoring_config(),
            "backend": {
                "kind": self.backend.kind,
                "endpoint": self.backend.endpoint,
            },
            "selection": self.selection,
        });
        // serde_json maps are key-sorted, so this text is canonical.
        let canonical = serde_json::to_string(&view).expect("digest view serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Hex sha256 of a file's contents.
pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
