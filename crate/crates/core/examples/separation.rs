//! Scores a mixed synthetic corpus with the built-in backend and prints
//! class statistics: mean score per kind, ranking AUC of recall vs markov,
//! and the share of recall documents kept at keep fraction 0.5.

use std::time::Instant;

use longfilter::backend::{CacheNGramModel, CacheParams};
use longfilter::corpus::{pack, Tokenizer};
use longfilter::oracle::{generate, MarkovSpec, RecallSpec, RepeatSpec, SynthSpec};
use longfilter::scorer::{score_batch, ScoringConfig};
use longfilter::selector::rank_and_select;

fn main() {
    let n: usize = std::env::args().nth(1).map_or(100, |s| s.parse().unwrap());
    let t0 = Instant::now();
    let from_env = |var: &str, default: SynthSpec| {
        std::env::var(var).map_or(default, |j| serde_json::from_str(&j).expect("spec json"))
    };
    let recall_spec = from_env("RECALL_SPEC", SynthSpec::Recall(RecallSpec::default()));
    let repeat_spec = from_env("REPEAT_SPEC", SynthSpec::Repeat(RepeatSpec::default()));
    let base: u64 = std::env::var("SEED").map_or(11, |s| s.parse().unwrap());
    let recall = generate(&recall_spec, base, n).unwrap();
    let markov_spec = from_env("MARKOV_SPEC", SynthSpec::Markov(MarkovSpec::default()));
    let markov = generate(&markov_spec, base + 1, n).unwrap();
    let repeat = generate(&repeat_spec, base + 2, n / 5).unwrap();
    let tok = Tokenizer::Byte;
    let fit_docs: Vec<_> = recall.iter().chain(&markov).map(|d| tok.tokenize(d).unwrap()).collect();
    let model = CacheNGramModel::fit(&fit_docs, 256, CacheParams::default()).unwrap();
    let all: Vec<_> = recall.iter().chain(&markov).chain(&repeat).map(|d| tok.tokenize(d).unwrap()).collect();
    let seqs = pack(&all, 8192).unwrap();
    let config = ScoringConfig::new(512, 8192);
    let results = score_batch(&model, &seqs, &config, 8);
    let scores: Vec<f64> = results.iter().map(|r| r.as_ref().unwrap().0.score).collect();
    let (r, rest) = scores.split_at(n);
    let (m, p) = rest.split_at(n);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("recall mean {:.6e} min {:.6e}", mean(r), r.iter().cloned().fold(f64::INFINITY, f64::min));
    println!("markov mean {:.6e} max {:.6e}", mean(m), m.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    println!("repeat mean {:.6e}", mean(p));
    let mut wins = 0.0;
    for a in r {
        for b in m {
            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    println!("auc {}", wins / (n * n) as f64);
    let seq_scores: Vec<_> = results.iter().take(2 * n).map(|r| r.as_ref().unwrap().0.clone()).collect();
    let manifest = rank_and_select(&seq_scores, 0.5).unwrap();
    let kept = manifest.selected.iter().filter(|id| seq_scores[..n].iter().any(|s| &s.seq_id == *id)).count();
    println!("recall kept {kept}/{n}; elapsed {:?}", t0.elapsed());
}
