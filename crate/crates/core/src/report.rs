//! Token heatmap reports: darker background means higher gain.
//!
//! Intensity is the gain mapped linearly from `[q05, q95]` of the
//! sequence's own gains onto `[0, 1]`, clipped at both ends.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Tokenizer;
use crate::records::TokenSidecar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub position: usize,
    pub token: String,
    pub lp_long: f64,
    pub lp_short: f64,
    pub gain: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenReport {
    pub seq_id: String,
    pub config_digest: String,
    pub tool_version: String,
    pub q05: f64,
    pub q95: f64,
    pub records: Vec<TokenRecord>,
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0` everywhere when the scale is degenerate.
pub fn intensity(gain: f64, q05: f64, q95: f64) -> f64 {
    if q95 > q05 {
        ((gain - q05) / (q95 - q05)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

impl TokenReport {
    pub fn from_sidecar(sidecar: &TokenSidecar, tokenizer: &Tokenizer) -> Result<Self, String> {
        if !sidecar.is_consistent() {
            return Err(format!("sidecar for {} has arrays of different lengths", sidecar.seq_id));
        }
        if sidecar.gain.is_empty() {
            return Err(format!("sidecar for {} has no scored positions", sidecar.seq_id));
        }
        let mut sorted = sidecar.gain.clone();
        sorted.sort_by(f64::total_cmp);
        let (q05, q95) = (quantile(&sorted, 0.05), quantile(&sorted, 0.95));
        let records = (0..sidecar.positions.len())
            .map(|i| TokenRecord {
                position: sidecar.positions[i],
                token: String::from_utf8_lossy(&tokenizer.piece(sidecar.tokens[i])).into_owned(),
                lp_long: sidecar.lp_long[i],
                lp_short: sidecar.lp_short[i],
                gain: sidecar.gain[i],
                intensity: intensity(sidecar.gain[i], q05, q95),
            })
            .collect();
        Ok(Self {
            seq_id: sidecar.seq_id.clone(),
            config_digest: sidecar.config_digest.clone(),
            tool_version: sidecar.tool_version.clone(),
            q05,
            q95,
            records,
        })
    }

    pub fn to_html(&self) -> String {
        let mut out = String::new();
        let title = escape(&self.seq_id);
        let _ = write!(
            out,
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{title}</title>\n\
             <style>body{{font-family:monospace;white-space:pre-wrap;line-height:1.6}}\
             span{{border-radius:2px}}</style></head><body>\n\
             <h3>{title}</h3>\n<p>scale q05={} q95={} &middot; config {} &middot; {}</p>\n<div>",
            self.q05,
            self.q95,
            escape(&self.config_digest),
            escape(&self.tool_version)
        );
        for r in &self.records {
            let _ = write!(
                out,
                "<span style=\"background:rgba(200,30,30,{:.3})\" title=\"pos {} gain {}\">{}</span>",
                r.intensity,
                r.position,
                r.gain,
                escape(&r.token)
            );
        }
        out.push_str("</div>\n</body></html>\n");
        out
    }

    pub fn series_csv(&self) -> String {
        let mut out = String::from("position,gain,intensity\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.position, r.gain, r.intensity);
        }
        out
    }

    /// Gain against position as a standalone SVG line chart.
    pub fn series_svg(&self) -> String {
        const W: f64 = 960.0;
        const H: f64 = 240.0;
        const PAD: f64 = 24.0;
        let first = self.records.first().map_or(0, |r| r.position) as f64;
        let last = self.records.last().map_or(1, |r| r.position) as f64;
        let lo = self.records.iter().map(|r| r.gain).fold(f64::INFINITY, f64::min).min(0.0);
        let hi = self.records.iter().map(|r| r.gain).fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let x = |p: usize| PAD + (p as f64 - first) / (last - first).max(1.0) * (W - 2.0 * PAD);
        let y = |g: f64| H - PAD - if hi > lo { (g - lo) / (hi - lo) } else { 0.0 } * (H - 2.0 * PAD);
        let mut points = String::new();
        for r in &self.records {
            let _ = write!(points, "{:.2},{:.2} ", x(r.position), y(r.gain));
        }
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n\
             <text x=\"{PAD}\" y=\"16\" font-size=\"12\">{} context score by position</text>\n\
             <line x1=\"{PAD}\" y1=\"{zero:.2}\" x2=\"{x2}\" y2=\"{zero:.2}\" stroke=\"#999\"/>\n\
             <polyline fill=\"none\" stroke=\"#c81e1e\" stroke-width=\"0.6\" points=\"{}\"/>\n</svg>\n",
            escape(&self.seq_id),
            points.trim_end(),
            zero = y(0.0),
            x2 = W - PAD,
        )
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c if c.is_control() && c != '\n' && c != '\t' => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sidecar(gains: &[f64]) -> TokenSidecar {
        TokenSidecar {
            seq_id: "seq-00000000".into(),
            config_digest: "d".into(),
            tool_version: "t".into(),
            positions: (1..=gains.len()).collect(),
            tokens: gains.iter().map(|_| u32::from(b'x')).collect(),
            lp_long: vec![-1.0; gains.len()],
            lp_short: vec![-1.0; gains.len()],
            gain: gains.to_vec(),
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert!((quantile(&v, 0.05) - 0.2).abs() < 1e-12);
        assert!((quantile(&v, 0.95) - 3.8).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn zero_gains_give_uniform_minimal_intensity() {
        let r = TokenReport::from_sidecar(&sidecar(&[0.0; 20]), &Tokenizer::Byte).unwrap();
        assert!(r.records.iter().all(|t| t.intensity == 0.0));
        assert_eq!(r.records.len(), 20);
    }

    #[test]
    fn intensity_is_clipped_and_monotone() {
        let gains: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = TokenReport::from_sidecar(&sidecar(&gains), &Tokenizer::Byte).unwrap();
        assert_eq!(r.records[0].intensity, 0.0);
        assert_eq!(r.records[99].intensity, 1.0);
        for w in r.records.windows(2) {
            assert!(w[1].intensity >= w[0].intensity);
        }
    }

    #[test]
    fn html_escapes_token_text() {
        let mut s = sidecar(&[0.1, 0.2]);
        s.tokens = vec![u32::from(b'<'), u32::from(b'&')];
        let html = TokenReport::from_sidecar(&s, &Tokenizer::Byte).unwrap().to_html();
        assert!(html.contains("&lt;</span>"));
        assert!(html.contains("&amp;</span>"));
        assert!(!html.contains("><</span>"));
    }

    #[test]
    fn outputs_are_reproducible() {
        let s = sidecar(&[0.3, -0.1, 0.0, 2.0]);
        let a = TokenReport::from_sidecar(&s, &Tokenizer::Byte).unwrap();
        let b = TokenReport::from_sidecar(&s, &Tokenizer::Byte).unwrap();
        assert_eq!(a.to_html(), b.to_html());
        assert_eq!(a.series_svg(), b.series_svg());
        assert!(a.series_csv().starts_with("position,gain,intensity\n1,0.3,"));
    }
}
