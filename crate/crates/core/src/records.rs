//! Line-delimited output records. Field order is fixed by the struct
//! definitions, so equal inputs serialize to identical bytes.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::scorer::{SequenceScore, TokenScore};
use crate::selector::{MixtureRecipe, MixtureSource, SelectionManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub seq_id: String,
    pub score: f64,
    pub n_scored: usize,
    pub config_digest: String,
    pub tool_version: String,
}

impl ScoreRecord {
    pub fn new(score: &SequenceScore, config_digest: &str) -> Self {
        Self {
            seq_id: score.seq_id.clone(),
            score: score.score,
            n_scored: score.n_scored,
            config_digest: config_digest.to_string(),
            tool_version: crate::TOOL_VERSION.to_string(),
        }
    }

    pub fn sequence_score(&self) -> SequenceScore {
        SequenceScore {
            seq_id: self.seq_id.clone(),
            score: self.score,
            n_scored: self.n_scored,
        }
    }
}

/// Per-token values of one sequence, consumed by the report command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSidecar {
    pub seq_id: String,
    pub config_digest: String,
    pub tool_version: String,
    pub positions: Vec<usize>,
    pub tokens: Vec<u32>,
    pub lp_long: Vec<f64>,
    pub lp_short: Vec<f64>,
    pub gain: Vec<f64>,
}

impl TokenSidecar {
    pub fn new(seq_id: &str, config_digest: &str, seq_tokens: &[u32], scores: &[TokenScore]) -> Self {
        Self {
            seq_id: seq_id.to_string(),
            config_digest: config_digest.to_string(),
            tool_version: crate::TOOL_VERSION.to_string(),
            positions: scores.iter().map(|s| s.position).collect(),
            tokens: scores.iter().map(|s| seq_tokens[s.position]).collect(),
            lp_long: scores.iter().map(|s| s.lp_long).collect(),
            lp_short: scores.iter().map(|s| s.lp_short).collect(),
            gain: scores.iter().map(|s| s.gain).collect(),
        }
    }

    pub fn token_scores(&self) -> Vec<TokenScore> {
        (0..self.positions.len())
            .map(|i| TokenScore {
                position: self.positions[i],
                lp_long: self.lp_long[i],
                lp_short: self.lp_short[i],
                gain: self.gain[i],
            })
            .collect()
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.positions.len();
        [self.tokens.len(), self.lp_long.len(), self.lp_short.len(), self.gain.len()]
            .iter()
            .all(|&l| l == n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum ManifestLine {
    Header {
        keep_fraction: f64,
        threshold_score: f64,
        n_entries: usize,
        n_selected: usize,
        config_digest: String,
        tool_version: String,
    },
    Entry {
        seq_id: String,
        score: f64,
        rank: usize,
        selected: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum MixtureLine {
    Header {
        long_fraction: f64,
        achieved_long_fraction: f64,
        n_long: usize,
        n_short: usize,
        seed: u64,
        config_digest: String,
        tool_version: String,
    },
    Item {
        index: usize,
        source: MixtureSource,
        id: String,
    },
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(io::Error::other)?;
    w.write_all(b"\n")
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, values: &[T]) -> io::Result<()> {
    for v in values {
        write_line(&mut w, v)?;
    }
    w.flush()
}

/// Parses every non-blank line; the error names the 1-based line number.
pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(r: R) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Reads score records, tolerating a truncated final line (an interrupted
/// append). Returns the records and whether a partial line was dropped.
pub fn read_scores_lenient<R: BufRead>(r: R) -> io::Result<(Vec<ScoreRecord>, bool)> {
    let lines: Vec<String> = r.lines().collect::<io::Result<_>>()?;
    let mut out = Vec::new();
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i == last => return Ok((out, true)),
            Err(e) => {
                return Err(io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)));
            }
        }
    }
    Ok((out, false))
}

pub fn manifest_lines(m: &SelectionManifest) -> Vec<ManifestLine> {
    let mut lines = vec![ManifestLine::Header {
        keep_fraction: m.keep_fraction,
        threshold_score: m.threshold_score,
        n_entries: m.entries.len(),
        n_selected: m.selected.len(),
        config_digest: m.config_digest.clone(),
        tool_version: crate::TOOL_VERSION.to_string(),
    }];
    lines.extend(m.entries.iter().map(|e| ManifestLine::Entry {
        seq_id: e.seq_id.clone(),
        score: e.score,
        rank: e.rank,
        selected: e.rank <= m.selected.len(),
    }));
    lines
}

pub fn mixture_lines(r: &MixtureRecipe, seed: u64, config_digest: &str) -> Vec<MixtureLine> {
    let n_long = r.schedule.iter().filter(|s| s.source == MixtureSource::Long).count();
    let mut lines = vec![MixtureLine::Header {
        long_fraction: r.long_fraction,
        achieved_long_fraction: r.achieved_long_fraction(),
        n_long,
        n_short: r.schedule.len() - n_long,
        seed,
        config_digest: config_digest.to_string(),
        tool_version: crate::TOOL_VERSION.to_string(),
    }];
    lines.extend(r.schedule.iter().enumerate().map(|(index, item)| MixtureLine::Item {
        index,
        source: item.source,
        id: item.id.clone(),
    }));
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::rank_and_select;

    #[test]
    fn manifest_header_comes_first() {
        let scores: Vec<SequenceScore> = (0..4)
            .map(|i| SequenceScore {
                seq_id: format!("seq-{i}"),
                score: i as f64,
                n_scored: 7,
            })
            .collect();
        let m = rank_and_select(&scores, 0.5).unwrap();
        let lines = manifest_lines(&m);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &lines).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(r#"{"record":"header","keep_fraction":0.5,"threshold_score":2.0"#));
        let back: Vec<ManifestLine> = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, lines);
        let selected = back
            .iter()
            .filter(|l| matches!(l, ManifestLine::Entry { selected: true, .. }))
            .count();
        assert_eq!(selected, 2);
    }

    #[test]
    fn lenient_read_drops_only_a_torn_tail() {
        let good = r#"{"seq_id":"a","score":0.5,"n_scored":3,"config_digest":"d","tool_version":"t"}"#;
        let torn = format!("{good}\n{{\"seq_id\":\"b\",\"sco");
        let (recs, dropped) = read_scores_lenient(torn.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(dropped);
        let bad_middle = format!("garbage\n{good}\n");
        assert!(read_scores_lenient(bad_middle.as_bytes()).is_err());
    }

    #[test]
    fn score_floats_round_trip_exactly() {
        let rec = ScoreRecord {
            seq_id: "s".into(),
            score: 0.1 + 0.2,
            n_scored: 1,
            config_digest: "d".into(),
            tool_version: "t".into(),
        };
        let text = serde_json::to_string(&rec).unwrap();
        let back: ScoreRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.score.to_bits(), rec.score.to_bits());
    }
}
