use std::io::Write;
use std::sync::Arc;

use anyhow::{Context, Result};
use longfilter::backend::{CacheNGramModel, LogProbProvider};
use longfilter::config::PipelineConfig;
use longfilter_server::serve_mock;

use crate::ServeArgs;

pub fn run(config: &PipelineConfig, args: &ServeArgs) -> Result<bool> {
    let path = args.model.clone().unwrap_or_else(|| config.model_path());
    let model = CacheNGramModel::load(&path).with_context(|| format!("cannot load model {}", path.display()))?;
    let info = model.info();
    let handle = serve_mock(Arc::new(model), &args.bind).with_context(|| format!("cannot bind {}", args.bind))?;
    println!("listening on {}", handle.url());
    std::io::stdout().flush()?;
    tracing::info!(
        model = %path.display(),
        vocab_size = info.vocab_size,
        tokenizer = %info.tokenizer_id,
        "serving; interrupt to stop"
    );
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?
        .block_on(tokio::signal::ctrl_c())
        .context("cannot wait for interrupt")?;
    handle.shutdown().context("server did not shut down cleanly")?;
    tracing::info!("shut down");
    Ok(true)
}
