use std::fs;
use std::io::Write;

use anyhow::{bail, Context, Result};
use longfilter::config::PipelineConfig;
use longfilter::records::{write_jsonl, TokenSidecar};
use longfilter::report::{TokenRecord, TokenReport};
use serde::{Deserialize, Serialize};

use crate::workspace::{sidecar_dir, sidecar_path, write_atomic};
use crate::ReportArgs;

/// Records of `<seq_id>.tokens.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum ReportLine {
    Header {
        seq_id: String,
        n_tokens: usize,
        q05: f64,
        q95: f64,
        config_digest: String,
        tool_version: String,
    },
    Token(TokenRecord),
}

pub fn report_lines(report: &TokenReport) -> Vec<ReportLine> {
    let mut lines = vec![ReportLine::Header {
        seq_id: report.seq_id.clone(),
        n_tokens: report.records.len(),
        q05: report.q05,
        q95: report.q95,
        config_digest: report.config_digest.clone(),
        tool_version: report.tool_version.clone(),
    }];
    lines.extend(report.records.iter().cloned().map(ReportLine::Token));
    lines
}

pub fn run(config: &PipelineConfig, args: &ReportArgs) -> Result<bool> {
    let ids = if args.all {
        let dir = sidecar_dir(config);
        let mut ids: Vec<String> = match fs::read_dir(&dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().to_str()?.strip_suffix(".json").map(str::to_string))
                .collect(),
            Err(_) => Vec::new(),
        };
        if ids.is_empty() {
            bail!(
                "no per-token sidecars under {}; rerun `longfilter score --sidecars` (or set scoring.sidecars = true)",
                dir.display()
            );
        }
        ids.sort();
        ids
    } else if args.seq_ids.is_empty() {
        bail!("name the sequences to render, or pass --all");
    } else {
        args.seq_ids.clone()
    };

    let tokenizer = config.tokenizer()?;
    let out = config.out_dir.join("report");
    for id in &ids {
        let path = sidecar_path(config, id);
        if !path.exists() {
            bail!(
                "no per-token sidecar for {id} at {}; rerun `longfilter score --sidecars` \
                 (or set scoring.sidecars = true) to write it",
                path.display()
            );
        }
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let sidecar: TokenSidecar =
            serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
        let report = TokenReport::from_sidecar(&sidecar, &tokenizer).map_err(anyhow::Error::msg)?;
        write_atomic(&out.join(format!("{id}.tokens.jsonl")), |w| write_jsonl(w, &report_lines(&report)))?;
        write_atomic(&out.join(format!("{id}.html")), |w| w.write_all(report.to_html().as_bytes()))?;
        write_atomic(&out.join(format!("{id}.series.csv")), |w| w.write_all(report.series_csv().as_bytes()))?;
        write_atomic(&out.join(format!("{id}.series.svg")), |w| w.write_all(report.series_svg().as_bytes()))?;
    }
    println!("rendered {} report(s) under {}", ids.len(), out.display());
    Ok(true)
}
