use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};

use anyhow::{bail, Context, Result};
use longfilter::config::{BackendKind, PipelineConfig};
use longfilter::corpus::PackedSequence;
use longfilter::records::{read_scores_lenient, write_jsonl, ScoreRecord, TokenSidecar};
use longfilter::scorer::score_sequence;
use rayon::prelude::*;

use crate::workspace::{
    load_corpus, open_provider, pack_long_docs, scores_path, sequence_lines, sequences_path, sidecar_path,
    write_atomic,
};
use crate::ScoreArgs;

/// Sequences scored between two appends to the score log.
const BATCH_PER_WORKER: usize = 4;

pub fn run(mut config: PipelineConfig, args: &ScoreArgs) -> Result<bool> {
    if args.sidecars {
        config.scoring.sidecars = true;
    }
    if let Some(endpoint) = &args.endpoint {
        config.backend.kind = BackendKind::Remote;
        config.backend.endpoint = Some(endpoint.clone());
    }
    let tokenizer = config.tokenizer()?;
    let (provider, model_sha) = open_provider(&config, &tokenizer)?;
    let digest = config.digest(model_sha.as_deref());
    let corpus = load_corpus(&config, &tokenizer)?;
    let (seqs, dropped) = pack_long_docs(&config, &corpus)?;
    let scoring = config.scoring_config();

    fs::create_dir_all(&config.out_dir).with_context(|| format!("cannot create {}", config.out_dir.display()))?;
    let resolved = format!(
        "# resolved by {}\n# config_digest = \"{digest}\"\n{}",
        longfilter::TOOL_VERSION,
        config.to_toml()
    );
    write_atomic(&config.out_dir.join("resolved.toml"), |w| w.write_all(resolved.as_bytes()))?;
    let layout = sequence_lines(&seqs, config.corpus.pack_len, dropped, &digest);
    write_atomic(&sequences_path(&config), |w| write_jsonl(w, &layout))?;

    let done = resume_state(&config, &digest, &seqs)?;
    let todo: Vec<&PackedSequence> = seqs.iter().filter(|s| !done.contains(&s.seq_id)).collect();
    tracing::info!(
        total = seqs.len(),
        already_scored = seqs.len() - todo.len(),
        workers = config.workers,
        "scoring"
    );

    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build()?;
    let path = scores_path(&config);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut failures = Vec::new();
    for batch in todo.chunks(config.workers * BATCH_PER_WORKER) {
        let results: Vec<_> = pool.install(|| {
            batch
                .par_iter()
                .map(|seq| score_sequence(provider.as_ref(), seq, &scoring))
                .collect()
        });
        for (seq, result) in batch.iter().zip(results) {
            match result {
                Ok((summary, tokens)) => {
                    if config.scoring.sidecars {
                        let sidecar = TokenSidecar::new(&seq.seq_id, &digest, &seq.tokens, &tokens);
                        write_atomic(&sidecar_path(&config, &seq.seq_id), |w| {
                            serde_json::to_writer(&mut *w, &sidecar).map_err(std::io::Error::other)?;
                            w.write_all(b"\n")
                        })?;
                    }
                    let mut line = serde_json::to_string(&ScoreRecord::new(&summary, &digest))?;
                    line.push('\n');
                    log.write_all(line.as_bytes())
                        .with_context(|| format!("cannot append to {}", path.display()))?;
                }
                Err(e) => {
                    tracing::error!(seq_id = %seq.seq_id, "scoring failed: {e}");
                    failures.push(seq.seq_id.clone());
                }
            }
        }
        log.flush()?;
        tracing::info!(done = batch.len(), "batch written");
    }
    drop(log);

    let records = finalize(&config)?;
    let mean = records.iter().map(|r| r.score).sum::<f64>() / records.len().max(1) as f64;
    println!(
        "scored {} of {} sequences ({} this run, {} failed); mean score {mean:.6e}",
        records.len(),
        seqs.len(),
        todo.len() - failures.len(),
        failures.len()
    );
    println!("scores written to {}", path.display());
    if !failures.is_empty() {
        eprintln!("failed sequences: {}", failures.join(", "));
        eprintln!("rerun `longfilter score` to retry them; finished sequences are kept");
    }
    if corpus.failed > 0 {
        eprintln!("{} corpus record(s) could not be read and were skipped", corpus.failed);
    }
    Ok(failures.is_empty() && corpus.failed == 0)
}

/// Reads an existing score log and returns the sequences that need no work.
fn resume_state(config: &PipelineConfig, digest: &str, seqs: &[PackedSequence]) -> Result<HashSet<String>> {
    let path = scores_path(config);
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let file = File::open(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let (records, torn) = read_scores_lenient(BufReader::new(file)).with_context(|| format!("{} is corrupt", path.display()))?;
    if let Some(r) = records.iter().find(|r| r.config_digest != digest) {
        bail!(
            "{} was written with config digest {} but the current config digest is {digest}. \
             The effective configuration (settings, inputs or model file) changed, so those scores \
             cannot be mixed with new ones. Use a fresh --out directory or delete the score file to rescore.",
            path.display(),
            r.config_digest
        );
    }
    let known: HashSet<&str> = seqs.iter().map(|s| s.seq_id.as_str()).collect();
    if let Some(r) = records.iter().find(|r| !known.contains(r.seq_id.as_str())) {
        bail!(
            "{} lists {} which the current corpus does not pack to; the inputs changed. \
             Use a fresh --out directory.",
            path.display(),
            r.seq_id
        );
    }
    if torn {
        tracing::warn!("dropping a partial last line of {}", path.display());
        write_atomic(&path, |w| write_jsonl(w, &records))?;
    }
    Ok(records
        .into_iter()
        .map(|r| r.seq_id)
        .filter(|id| !config.scoring.sidecars || sidecar_path(config, id).exists())
        .collect())
}

/// Rewrites the score log sorted by sequence id, one record per sequence.
/// The result does not depend on worker count or on interruptions.
fn finalize(config: &PipelineConfig) -> Result<Vec<ScoreRecord>> {
    let path = scores_path(config);
    let file = File::open(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let (records, _) = read_scores_lenient(BufReader::new(file))?;
    let unique: BTreeMap<String, ScoreRecord> = records.into_iter().map(|r| (r.seq_id.clone(), r)).collect();
    let sorted: Vec<ScoreRecord> = unique.into_values().collect();
    write_atomic(&path, |w| write_jsonl(w, &sorted))?;
    Ok(sorted)
}
