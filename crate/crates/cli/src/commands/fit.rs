use std::collections::BTreeMap;

use anyhow::{Context, Result};
use longfilter::backend::CacheNGramModel;
use longfilter::config::PipelineConfig;

use crate::workspace::{load_corpus, partition};

#[derive(Default)]
struct SourceStats {
    docs: usize,
    tokens: usize,
    long_docs: usize,
    long_tokens: usize,
}

pub fn run(config: &PipelineConfig) -> Result<bool> {
    let tokenizer = config.tokenizer()?;
    let corpus = load_corpus(config, &tokenizer)?;
    let model = CacheNGramModel::fit(&corpus.docs, tokenizer.vocab_size(), config.cache_params())
        .context("cannot fit the model")?;
    let path = config.model_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    model.save(&path).with_context(|| format!("cannot write model {}", path.display()))?;

    let (long, _) = partition(config, &corpus.docs)?;
    let mut stats: BTreeMap<&str, SourceStats> = BTreeMap::new();
    for (i, d) in corpus.docs.iter().enumerate() {
        let s = stats.entry(&d.source).or_default();
        s.docs += 1;
        s.tokens += d.tokens.len();
        if long.binary_search(&i).is_ok() {
            s.long_docs += 1;
            s.long_tokens += d.tokens.len();
        }
    }
    println!("{:<16} {:>8} {:>12} {:>10} {:>12} {:>10}", "source", "docs", "tokens", "long_docs", "long_tokens", "threshold");
    for (source, s) in &stats {
        println!(
            "{source:<16} {:>8} {:>12} {:>10} {:>12} {:>10}",
            s.docs,
            s.tokens,
            s.long_docs,
            s.long_tokens,
            config.threshold_for(source)
        );
    }
    println!("model written to {} ({} tokens seen)", path.display(), model.tokens_seen());
    if corpus.failed > 0 {
        eprintln!("{} record(s) could not be read and were skipped", corpus.failed);
    }
    Ok(corpus.failed == 0)
}
