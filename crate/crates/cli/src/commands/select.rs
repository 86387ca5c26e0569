use std::fs::File;
use std::io::BufReader;

use anyhow::{bail, Context, Result};
use longfilter::config::PipelineConfig;
use longfilter::records::{manifest_lines, mixture_lines, read_jsonl, write_jsonl, ScoreRecord};
use longfilter::selector::{compose_mixture, rank_and_select};

use crate::workspace::{config_digest, load_corpus, partition, scores_path, sequences_path, write_atomic, SequenceLine};

pub fn run(config: &PipelineConfig) -> Result<bool> {
    let digest = config_digest(config)?;
    let path = scores_path(config);
    if !path.exists() {
        bail!("no score file at {}; run `longfilter score` first", path.display());
    }
    let records: Vec<ScoreRecord> = read_jsonl(BufReader::new(File::open(&path)?))
        .with_context(|| format!("cannot parse {}", path.display()))?;
    if let Some(r) = records.iter().find(|r| r.config_digest != digest) {
        bail!(
            "{} holds scores for config digest {} but the current config digest is {digest}; \
             rerun `longfilter score` with this config",
            path.display(),
            r.config_digest
        );
    }
    let layout_path = sequences_path(config);
    let layout: Vec<SequenceLine> = read_jsonl(BufReader::new(
        File::open(&layout_path).with_context(|| format!("cannot read {}", layout_path.display()))?,
    ))?;
    let Some(SequenceLine::Header { n_sequences, .. }) = layout.first() else {
        bail!("{} has no header", layout_path.display());
    };
    if records.len() != *n_sequences {
        bail!(
            "scores cover {} of {n_sequences} sequences; rerun `longfilter score` to finish",
            records.len()
        );
    }

    let scores: Vec<_> = records.iter().map(ScoreRecord::sequence_score).collect();
    let mut manifest = rank_and_select(&scores, config.selection.keep_fraction)?;
    manifest.config_digest = digest.clone();

    let tokenizer = config.tokenizer()?;
    let corpus = load_corpus(config, &tokenizer)?;
    let (_, short) = partition(config, &corpus.docs)?;
    let short_pool: Vec<String> = short.iter().map(|&i| corpus.docs[i].doc_id.clone()).collect();
    let recipe = compose_mixture(&manifest, &short_pool, config.selection.long_fraction, config.seed)?;

    let manifest_path = config.out_dir.join("manifest.jsonl");
    let mixture_path = config.out_dir.join("mixture.jsonl");
    write_atomic(&manifest_path, |w| write_jsonl(w, &manifest_lines(&manifest)))?;
    write_atomic(&mixture_path, |w| write_jsonl(w, &mixture_lines(&recipe, config.seed, &digest)))?;

    println!(
        "selected {} of {} sequences (keep_fraction {}, threshold score {:.6e})",
        manifest.selected.len(),
        manifest.entries.len(),
        manifest.keep_fraction,
        manifest.threshold_score
    );
    println!(
        "mixture: {} items, long fraction {:.4} (target {}), {} short documents available",
        recipe.schedule.len(),
        recipe.achieved_long_fraction(),
        recipe.long_fraction,
        short_pool.len()
    );
    println!("wrote {} and {}", manifest_path.display(), mixture_path.display());
    if corpus.failed > 0 {
        eprintln!("{} corpus record(s) could not be read and were skipped", corpus.failed);
    }
    Ok(corpus.failed == 0)
}
