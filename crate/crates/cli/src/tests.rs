use std::fs;
use std::path::Path;

use clap::Parser;
use longfilter::oracle::{generate, RecallSpec, SynthSpec};
use longfilter::records::{read_jsonl, ManifestLine, TokenSidecar};
use tempfile::TempDir;

use super::*;
use crate::commands::report::ReportLine;

fn longfilter(args: &[&str]) -> Result<bool> {
    let cli = Cli::try_parse_from(std::iter::once("longfilter").chain(args.iter().copied()))?;
    run(&cli)
}

/// A project directory with 6 recall + 4 markov long documents (one
/// 8192-token sequence each) and 12 short markov documents.
fn project(extra: &str) -> (TempDir, String) {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let p = |s: &str| d.join(s).to_string_lossy().into_owned();
    let long_r = p("corpus/long/r.jsonl");
    let long_m = p("corpus/long/m.jsonl");
    let short = p("corpus/short/m.jsonl");
    longfilter(&["--seed", "1", "synth", "recall", "--count", "6", "--output", &long_r]).unwrap();
    longfilter(&["--seed", "2", "synth", "markov", "--count", "4", "--output", &long_m]).unwrap();
    longfilter(&["--seed", "3", "synth", "markov", "--count", "12", "--spec", r#"{"length":300}"#, "--output", &short])
        .unwrap();
    let config = d.join("lf.toml");
    fs::write(
        &config,
        format!(
            "schema_version = 1\nseed = 9\nworkers = 2\n\
             [corpus]\npack_len = 8192\n\
             inputs = [{{ path = \"corpus/long\", source = \"synth\" }}, {{ path = \"corpus/short\", source = \"web\" }}]\n\
             [partition]\ndefault_threshold = 1000\n\
             [scoring]\nshort_len = 512\nlong_len = 8192\n{extra}"
        ),
    )
    .unwrap();
    let config = config.to_string_lossy().into_owned();
    (tmp, config)
}

fn out(tmp: &TempDir, file: &str) -> Vec<u8> {
    fs::read(tmp.path().join("out").join(file)).unwrap()
}

#[test]
fn flags_override_the_config_file() {
    let cli = Cli::try_parse_from(["longfilter", "score", "--workers", "3", "--seed", "4", "--out", "x"]).unwrap();
    let config = load_config(&cli.common).unwrap();
    assert_eq!((config.workers, config.seed), (3, 4));
    assert_eq!(config.out_dir, Path::new("x"));
}

#[test]
fn fit_rejects_order_zero() {
    let (_tmp, config) = project("[model]\norder = 0\n");
    let err = longfilter(&["--config", &config, "fit"]).unwrap_err();
    assert!(format!("{err:#}").contains("order"), "{err:#}");
}

#[test]
fn fit_is_reproducible_and_reloads() {
    let (tmp, config) = project("");
    assert!(longfilter(&["--config", &config, "fit"]).unwrap());
    let first = out(&tmp, "model.json");
    longfilter::backend::CacheNGramModel::load(&tmp.path().join("out/model.json")).unwrap();
    assert!(longfilter(&["--config", &config, "fit"]).unwrap());
    assert_eq!(first, out(&tmp, "model.json"));
}

#[test]
fn fit_reports_an_empty_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let config = tmp.path().join("lf.toml");
    fs::write(&config, "schema_version = 1\n[corpus]\ninputs = [{ path = \"empty\" }]\n").unwrap();
    let err = longfilter(&["--config", config.to_str().unwrap(), "fit"]).unwrap_err();
    assert!(format!("{err:#}").contains("empty"), "{err:#}");
}

#[test]
fn score_resumes_after_an_interrupt() {
    let (tmp, config) = project("");
    longfilter(&["--config", &config, "fit"]).unwrap();
    assert!(longfilter(&["--config", &config, "score"]).unwrap());
    let full = out(&tmp, "scores.jsonl");
    let text = String::from_utf8(full.clone()).unwrap();
    assert_eq!(text.lines().count(), 10);

    // Keep three records and half of a fourth, as an interrupted append would.
    let lines: Vec<&str> = text.lines().collect();
    let partial = format!("{}\n{}", lines[..3].join("\n"), &lines[3][..20]);
    fs::write(tmp.path().join("out/scores.jsonl"), partial).unwrap();
    assert!(longfilter(&["--config", &config, "score", "--workers", "1"]).unwrap());
    assert_eq!(full, out(&tmp, "scores.jsonl"));
}

#[test]
fn score_refuses_a_changed_config() {
    let (_tmp, config) = project("");
    longfilter(&["--config", &config, "fit"]).unwrap();
    longfilter(&["--config", &config, "score"]).unwrap();
    let err = longfilter(&["--config", &config, "--seed", "10", "score"]).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("config digest") && msg.contains("fresh --out"), "{msg}");
}

#[test]
fn score_needs_a_model() {
    let (_tmp, config) = project("");
    let err = longfilter(&["--config", &config, "score"]).unwrap_err();
    assert!(format!("{err:#}").contains("longfilter fit"), "{err:#}");
}

#[test]
fn select_keeps_the_top_fraction_and_is_repeatable() {
    let (tmp, config) = project("[selection]\nkeep_fraction = 0.2\nlong_fraction = 0.5\n");
    longfilter(&["--config", &config, "fit"]).unwrap();
    let err = longfilter(&["--config", &config, "select"]).unwrap_err();
    assert!(format!("{err:#}").contains("longfilter score"), "{err:#}");
    longfilter(&["--config", &config, "score"]).unwrap();
    assert!(longfilter(&["--config", &config, "select"]).unwrap());
    let manifest = out(&tmp, "manifest.jsonl");
    let mixture = out(&tmp, "mixture.jsonl");
    let lines: Vec<ManifestLine> = read_jsonl(manifest.as_slice()).unwrap();
    match &lines[0] {
        ManifestLine::Header { n_entries, n_selected, .. } => assert_eq!((*n_entries, *n_selected), (10, 2)),
        other => panic!("unexpected first line {other:?}"),
    }
    longfilter(&["--config", &config, "select"]).unwrap();
    assert_eq!(manifest, out(&tmp, "manifest.jsonl"));
    assert_eq!(mixture, out(&tmp, "mixture.jsonl"));
}

#[test]
fn report_needs_sidecars() {
    let (_tmp, config) = project("");
    longfilter(&["--config", &config, "fit"]).unwrap();
    longfilter(&["--config", &config, "score"]).unwrap();
    let err = longfilter(&["--config", &config, "report", "seq-00000000"]).unwrap_err();
    assert!(format!("{err:#}").contains("--sidecars"), "{err:#}");
}

#[test]
fn report_highlights_recall_queries() {
    let (tmp, config) = project("");
    longfilter(&["--config", &config, "fit"]).unwrap();
    longfilter(&["--config", &config, "score", "--sidecars"]).unwrap();
    // Files under corpus/long are read in name order: m.jsonl (4 markov
    // docs) first, so the first recall document is sequence 4.
    let seq = "seq-00000004";
    longfilter(&["--config", &config, "report", seq]).unwrap();
    let html = out(&tmp, &format!("report/{seq}.html"));
    let records = out(&tmp, &format!("report/{seq}.tokens.jsonl"));
    longfilter(&["--config", &config, "report", seq]).unwrap();
    assert_eq!(html, out(&tmp, &format!("report/{seq}.html")));
    assert_eq!(records, out(&tmp, &format!("report/{seq}.tokens.jsonl")));

    let sidecar: TokenSidecar = serde_json::from_slice(&out(&tmp, &format!("tokens/{seq}.json"))).unwrap();
    let lines: Vec<ReportLine> = read_jsonl(records.as_slice()).unwrap();
    assert_eq!(lines.len(), sidecar.positions.len() + 1);

    let doc = &generate(&SynthSpec::Recall(RecallSpec::default()), 1, 1).unwrap()[0];
    let spans: Vec<(usize, usize)> = serde_json::from_str(&doc.meta["query_spans"]).unwrap();
    let in_query = |p: usize| spans.iter().any(|&(s, e)| p >= s && p < e);
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for line in &lines[1..] {
        let ReportLine::Token(t) = line else { panic!("token line expected") };
        let bucket = if in_query(t.position) { &mut inside } else { &mut outside };
        bucket.push((t.gain, t.intensity));
    }
    let mean = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    let (gain_in, gain_out) = (mean(&inside, |x| x.0), mean(&outside, |x| x.0));
    let (int_in, int_out) = (mean(&inside, |x| x.1), mean(&outside, |x| x.1));
    // Single-token gains are noisy, so the contrast is clear in the mean
    // gain and smaller in the clipped intensity.
    assert!(gain_in > 5.0 * gain_out, "query gain {gain_in} vs elsewhere {gain_out}");
    assert!(int_in > int_out, "query intensity {int_in} vs elsewhere {int_out}");
    let csv = String::from_utf8(out(&tmp, &format!("report/{seq}.series.csv"))).unwrap();
    assert!(csv.starts_with("position,gain,intensity\n"));
    assert!(String::from_utf8(out(&tmp, &format!("report/{seq}.series.svg"))).unwrap().starts_with("<svg"));
}

#[test]
fn synth_is_deterministic_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("b.jsonl");
    for p in [&a, &b] {
        longfilter(&["--seed", "5", "synth", "repeat", "--count", "3", "--output", p.to_str().unwrap()]).unwrap();
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let bad = |spec: &str| longfilter(&["synth", "repeat", "--spec", spec, "--output", a.to_str().unwrap()]);
    assert!(format!("{:#}", bad(r#"{"periodd":8}"#).unwrap_err()).contains("unknown"));
    assert!(bad(r#"{"period":4096}"#).is_err());
    assert!(bad("[1]").is_err());
}
