//! Ranking, top-fraction selection and the long/short training mixture.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scorer::SequenceScore;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub seq_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    /// Sorted by score descending, ties by `seq_id` ascending.
    pub entries: Vec<RankedEntry>,
    pub keep_fraction: f64,
    pub threshold_score: f64,
    pub selected: Vec<String>,
    pub config_digest: String,
}

/// `ceil(fraction * n)`, treating products within 1e-9 of an integer as
/// that integer so that e.g. `0.7 * 10` keeps 7 rather than 8.
pub fn keep_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, n)
}

fn by_rank(a: &SequenceScore, b: &SequenceScore) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.seq_id.cmp(&b.seq_id))
}

pub fn rank_and_select(scores: &[SequenceScore], keep_fraction: f64) -> Result<SelectionManifest, SelectError> {
    if scores.is_empty() {
        return Err(SelectError::Argument("no scored sequences to select from".into()));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(SelectError::Argument(format!("keep_fraction must be in (0, 1], got {keep_fraction}")));
    }
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(SelectError::Argument(format!("non-finite score for {}", bad.seq_id)));
    }
    let mut seen = HashSet::with_capacity(scores.len());
    if let Some(dup) = scores.iter().find(|s| !seen.insert(s.seq_id.as_str())) {
        return Err(SelectError::Argument(format!("duplicate seq_id {}", dup.seq_id)));
    }
    let mut sorted: Vec<&SequenceScore> = scores.iter().collect();
    sorted.sort_by(|a, b| by_rank(a, b));
    let entries: Vec<RankedEntry> = sorted
        .iter()
        .enumerate()
        .map(|(i, s)| RankedEntry {
            seq_id: s.seq_id.clone(),
            score: s.score,
            rank: i + 1,
        })
        .collect();
    let k = keep_count(keep_fraction, entries.len());
    Ok(SelectionManifest {
        threshold_score: entries[k - 1].score,
        selected: entries[..k].iter().map(|e| e.seq_id.clone()).collect(),
        entries,
        keep_fraction,
        config_digest: String::new(),
    })
}

/// Whether the selection at `f1` is contained in the selection at `f2`.
pub fn selection_monotonicity_check(scores: &[SequenceScore], f1: f64, f2: f64) -> bool {
    let (Ok(a), Ok(b)) = (rank_and_select(scores, f1), rank_and_select(scores, f2)) else {
        return false;
    };
    a.selected.iter().all(|id| b.selected.contains(id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureSource {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleItem {
    pub source: MixtureSource,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecipe {
    pub long_fraction: f64,
    pub long_pool: Vec<String>,
    pub short_pool: Vec<String>,
    pub schedule: Vec<ScheduleItem>,
}

impl MixtureRecipe {
    pub fn achieved_long_fraction(&self) -> f64 {
        if self.schedule.is_empty() {
            return 0.0;
        }
        let long = self.schedule.iter().filter(|s| s.source == MixtureSource::Long).count();
        long as f64 / self.schedule.len() as f64
    }
}

/// Builds the largest schedule the pools allow at the requested long
/// fraction. Long items are taken in rank order and short items in pool
/// order; their interleaving is a seeded shuffle.
pub fn compose_mixture(
    selected: &SelectionManifest,
    short_pool: &[String],
    long_fraction: f64,
    seed: u64,
) -> Result<MixtureRecipe, SelectError> {
    if !(0.0..=1.0).contains(&long_fraction) {
        return Err(SelectError::Argument(format!("long_fraction must be in [0, 1], got {long_fraction}")));
    }
    let long_pool = &selected.selected;
    if long_fraction > 0.0 && long_pool.is_empty() {
        return Err(SelectError::Argument("long pool is empty but long_fraction > 0".into()));
    }
    if long_fraction < 1.0 && short_pool.is_empty() {
        return Err(SelectError::Argument(
            "short pool is empty but long_fraction < 1; no short documents fall below the length threshold".into(),
        ));
    }
    // Largest total the pools can supply, tolerating float error in the ratio.
    let cap = |available: usize, frac: f64| -> f64 {
        if frac <= 0.0 {
            f64::INFINITY
        } else {
            (available as f64 / frac + 1e-9).floor()
        }
    };
    let total = cap(long_pool.len(), long_fraction).min(cap(short_pool.len(), 1.0 - long_fraction));
    let total = total as usize;
    let n_long = ((long_fraction * total as f64).round() as usize).min(long_pool.len());
    let n_short = (total - n_long).min(short_pool.len());

    let mut schedule: Vec<ScheduleItem> = long_pool[..n_long]
        .iter()
        .map(|id| ScheduleItem {
            source: MixtureSource::Long,
            id: id.clone(),
        })
        .chain(short_pool[..n_short].iter().map(|id| ScheduleItem {
            source: MixtureSource::Short,
            id: id.clone(),
        }))
        .collect();
    schedule.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(MixtureRecipe {
        long_fraction,
        long_pool: long_pool.clone(),
        short_pool: short_pool.to_vec(),
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(values: &[f64]) -> Vec<SequenceScore> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| SequenceScore {
                seq_id: format!("seq-{i:03}"),
                score: v,
                n_scored: 10,
            })
            .collect()
    }

    #[test]
    fn keeps_top_two_of_ten() {
        let s = scores(&[0.1, 0.9, 0.3, 0.8, 0.2, 0.0, 0.4, 0.5, 0.6, 0.7]);
        let m = rank_and_select(&s, 0.2).unwrap();
        assert_eq!(m.selected, vec!["seq-001", "seq-003"]);
        assert_eq!(m.threshold_score, 0.8);
        assert_eq!(m.entries[0].rank, 1);
    }

    #[test]
    fn keep_all_thresholds_at_min() {
        let s = scores(&[0.1, -0.5, 0.3]);
        let m = rank_and_select(&s, 1.0).unwrap();
        assert_eq!(m.selected.len(), 3);
        assert_eq!(m.threshold_score, -0.5);
    }

    #[test]
    fn ties_break_by_seq_id() {
        let mut s = scores(&[0.5, 0.5]);
        s.reverse();
        let m = rank_and_select(&s, 0.5).unwrap();
        assert_eq!(m.selected, vec!["seq-000"]);
    }

    #[test]
    fn select_preconditions() {
        assert!(rank_and_select(&[], 0.5).is_err());
        assert!(rank_and_select(&scores(&[1.0]), 0.0).is_err());
        assert!(rank_and_select(&scores(&[1.0]), 1.5).is_err());
        assert!(rank_and_select(&scores(&[f64::NAN]), 0.5).is_err());
    }

    #[test]
    fn keep_count_absorbs_float_noise() {
        assert_eq!(keep_count(0.7, 10), 7);
        assert_eq!(keep_count(0.2, 10), 2);
        assert_eq!(keep_count(0.21, 10), 3);
        assert_eq!(keep_count(1e-6, 10), 1);
    }

    #[test]
    fn monotonicity_examples() {
        let s = scores(&[0.3, 0.1, 0.7, 0.2, 0.9]);
        assert!(selection_monotonicity_check(&s, 0.1, 0.5));
        assert!(selection_monotonicity_check(&s, 0.4, 0.4));
    }

    fn manifest_with(n: usize) -> SelectionManifest {
        let s = scores(&(0..n).map(|i| i as f64).collect::<Vec<_>>());
        rank_and_select(&s, 1.0).unwrap()
    }

    #[test]
    fn eighty_twenty_mixture() {
        let m = manifest_with(8);
        let short: Vec<String> = vec!["short-a".into(), "short-b".into()];
        let r = compose_mixture(&m, &short, 0.8, 7).unwrap();
        assert_eq!(r.schedule.len(), 10);
        let long = r.schedule.iter().filter(|s| s.source == MixtureSource::Long).count();
        assert_eq!(long, 8);
    }

    #[test]
    fn all_long_mixture_needs_no_short_pool() {
        let r = compose_mixture(&manifest_with(5), &[], 1.0, 0).unwrap();
        assert_eq!(r.schedule.len(), 5);
        assert!(r.schedule.iter().all(|s| s.source == MixtureSource::Long));
    }

    #[test]
    fn mixture_is_seed_deterministic() {
        let m = manifest_with(12);
        let short: Vec<String> = (0..9).map(|i| format!("s{i}")).collect();
        let a = compose_mixture(&m, &short, 0.6, 42).unwrap();
        let b = compose_mixture(&m, &short, 0.6, 42).unwrap();
        let c = compose_mixture(&m, &short, 0.6, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.schedule, c.schedule);
    }

    #[test]
    fn empty_required_pool_is_an_error() {
        assert!(compose_mixture(&manifest_with(4), &[], 0.8, 0).is_err());
    }

    proptest! {
        #[test]
        fn selection_invariants(
            values in proptest::collection::vec(-1.0f64..1.0, 1..60),
            f1 in 0.01f64..1.0,
            f2 in 0.01f64..1.0,
            rotate in 0usize..60,
        ) {
            let s = scores(&values);
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let a = rank_and_select(&s, lo).unwrap();
            let b = rank_and_select(&s, hi).unwrap();
            prop_assert_eq!(&b.selected[..a.selected.len()], &a.selected[..]);
            prop_assert_eq!(a.selected.len(), keep_count(lo, s.len()));
            for w in a.entries.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            let mut permuted = s.clone();
            permuted.rotate_left(rotate % s.len());
            permuted.reverse();
            prop_assert_eq!(rank_and_select(&permuted, lo).unwrap(), a);
        }

        #[test]
        fn mixture_fraction_within_one_item(
            n_long in 1usize..50,
            n_short in 1usize..50,
            frac in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let m = manifest_with(n_long);
            let short: Vec<String> = (0..n_short).map(|i| format!("s{i}")).collect();
            let r = compose_mixture(&m, &short, frac, seed).unwrap();
            prop_assert!(!r.schedule.is_empty());
            let err = (r.achieved_long_fraction() - frac).abs();
            prop_assert!(err <= 1.0 / r.schedule.len() as f64 + 1e-12, "err {} len {}", err, r.schedule.len());
        }
    }
}
