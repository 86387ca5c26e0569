use anyhow::{bail, Context, Result};
use longfilter::config::PipelineConfig;
use longfilter::corpus::write_structured;
use longfilter::oracle::{generate, MarkovSpec, RecallSpec, RepeatSpec, SynthSpec};
use serde_json::Value;

use crate::workspace::write_atomic;
use crate::{SynthArgs, SynthKind};

/// Default spec of `kind` with the fields of `overrides` replaced.
pub fn build_spec(kind: SynthKind, overrides: Option<&str>) -> Result<SynthSpec> {
    let base = match kind {
        SynthKind::Markov => SynthSpec::Markov(MarkovSpec::default()),
        SynthKind::Recall => SynthSpec::Recall(RecallSpec::default()),
        SynthKind::Repeat => SynthSpec::Repeat(RepeatSpec::default()),
    };
    let Some(text) = overrides else {
        return Ok(base);
    };
    let Value::Object(patch) = serde_json::from_str::<Value>(text).context("--spec is not valid JSON")? else {
        bail!("--spec must be a JSON object");
    };
    let mut value = serde_json::to_value(&base)?;
    let fields = value.as_object_mut().expect("spec serializes to an object");
    for (key, v) in patch {
        if key == "kind" || !fields.contains_key(&key) {
            let known: Vec<&str> = fields.keys().map(String::as_str).filter(|k| *k != "kind").collect();
            bail!("unknown {} spec field {key:?}; fields are {}", base.kind_name(), known.join(", "));
        }
        fields.insert(key, v);
    }
    serde_json::from_value(value).context("invalid --spec value")
}

pub fn run(config: &PipelineConfig, args: &SynthArgs) -> Result<bool> {
    let spec = build_spec(args.kind, args.spec.as_deref())?;
    let docs = generate(&spec, config.seed, args.count)?;
    let path = args
        .output
        .clone()
        .unwrap_or_else(|| config.out_dir.join(format!("synth-{}.jsonl", spec.kind_name())));
    write_atomic(&path, |w| write_structured(w, &docs))?;
    println!(
        "wrote {} {} documents (seed {}) to {}",
        docs.len(),
        spec.kind_name(),
        config.seed,
        path.display()
    );
    Ok(true)
}
