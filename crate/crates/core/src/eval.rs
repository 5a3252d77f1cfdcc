//! Threshold-swept F1 for the inference tasks and rank metrics for link
//! prediction. Lower energy means "more likely a true pair" throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub energy: f64,
    pub label: bool,
}

impl Scored {
    pub fn new(energy: f64, label: bool) -> Self {
        Self { energy, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn check_finite(pairs: &[Scored]) -> Result<()> {
    match pairs.iter().find(|s| !s.energy.is_finite()) {
        Some(s) => Err(Error::Config(format!("non-finite energy {}", s.energy))),
        None => Ok(()),
    }
}

/// The threshold among observed energies maximizing F1 (smallest on ties).
pub fn best_threshold_f1(pairs: &[Scored]) -> Result<(f64, f64)> {
    check_finite(pairs)?;
    let positives = pairs.iter().filter(|s| s.label).count();
    if positives == 0 || positives == pairs.len() {
        return Err(Error::SingleClass);
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.energy.total_cmp(&b.energy));

    let (mut tp, mut fp) = (0, 0);
    let mut best = (sorted[0].energy, -1.0);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].energy;
        while i < sorted.len() && sorted[i].energy == t {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let score = f1(tp, fp, positives - tp);
        if score > best.1 {
            best = (t, score);
        }
    }
    Ok(best)
}

/// Precision, recall and F1 predicting positive when `energy ≤ t`.
pub fn f1_at_threshold(pairs: &[Scored], t: f64) -> Confusion {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for s in pairs {
        match (s.energy <= t, s.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Confusion {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: f1(tp, fp, fn_),
    }
}

/// Rank (1-based) of the true answer among `count` candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub rank: usize,
    pub count: usize,
}

/// Pessimistic rank: the true answer goes after every other candidate with
/// energy at most its own.
pub fn pessimistic_rank(target: f64, others: impl IntoIterator<Item = f64>) -> RankResult {
    let (mut rank, mut count) = (1, 1);
    for e in others {
        count += 1;
        if e <= target {
            rank += 1;
        }
    }
    RankResult { rank, count }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub h1: f64,
    pub h10: f64,
    pub h100: f64,
    pub median: f64,
    pub mrr: f64,
    pub mr: f64,
    /// Mean normalized rank `1 − (rank − 1)/(count − 1)`; `None` when no
    /// query has more than one candidate.
    pub auc: Option<f64>,
}

pub fn hits_at(results: &[RankResult], k: usize) -> f64 {
    results.iter().filter(|r| r.rank <= k).count() as f64 / results.len() as f64
}

pub fn ranking_metrics(results: &[RankResult]) -> Result<RankingMetrics> {
    if results.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(r) = results.iter().find(|r| r.rank == 0 || r.rank > r.count) {
        return Err(Error::Config(format!("rank {} outside 1..={}", r.rank, r.count)));
    }
    let n = results.len() as f64;
    let mut ranks: Vec<usize> = results.iter().map(|r| r.rank).collect();
    ranks.sort_unstable();
    let mid = ranks.len() / 2;
    let median = if ranks.len() % 2 == 1 {
        ranks[mid] as f64
    } else {
        (ranks[mid - 1] + ranks[mid]) as f64 / 2.0
    };

    let auc_terms: Vec<f64> = results
        .iter()
        .filter_map(|r| {
            if r.count > 1 {
                Some(1.0 - (r.rank - 1) as f64 / (r.count - 1) as f64)
            } else {
                log::warn!("query with a single candidate skipped in AUC");
                None
            }
        })
        .collect();

    Ok(RankingMetrics {
        h1: hits_at(results, 1),
        h10: hits_at(results, 10),
        h100: hits_at(results, 100),
        median,
        mrr: results.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / n,
        mr: ranks.iter().sum::<usize>() as f64 / n,
        auc: (!auc_terms.is_empty()).then(|| auc_terms.iter().sum::<f64>() / auc_terms.len() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scored(pos: &[f64], neg: &[f64]) -> Vec<Scored> {
        pos.iter()
            .map(|&e| Scored::new(e, true))
            .chain(neg.iter().map(|&e| Scored::new(e, false)))
            .collect()
    }

    #[test]
    fn separable_picks_smallest_threshold() {
        let (t, f) = best_threshold_f1(&scored(&[-0.5], &[0.3])).unwrap();
        assert_eq!((t, f), (-0.5, 1.0));
        let (t, f) = best_threshold_f1(&scored(&[-0.5, -0.7], &[0.3, 0.4])).unwrap();
        assert_eq!((t, f), (-0.5, 1.0));
    }

    #[test]
    fn inverted_pair() {
        let (t, f) = best_threshold_f1(&scored(&[0.4], &[0.1])).unwrap();
        assert_eq!(t, 0.4);
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(best_threshold_f1(&scored(&[0.1], &[])), Err(Error::SingleClass)));
        assert!(matches!(best_threshold_f1(&scored(&[], &[0.1])), Err(Error::SingleClass)));
        assert!(best_threshold_f1(&scored(&[f64::NAN], &[0.1])).is_err());
    }

    #[test]
    fn confusion_conventions() {
        let c = f1_at_threshold(&scored(&[0.0], &[0.0]), 0.0);
        assert_eq!((c.precision, c.recall), (0.5, 1.0));
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-15);
        let c = f1_at_threshold(&scored(&[1.0], &[2.0]), 0.0);
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
        let c = f1_at_threshold(&scored(&[-1.0, 0.0], &[1.0]), 0.0);
        assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ranking_examples() {
        let m = ranking_metrics(&[RankResult { rank: 1, count: 100 }]).unwrap();
        assert_eq!((m.h1, m.mrr, m.mr, m.auc), (1.0, 1.0, 1.0, Some(1.0)));

        let m = ranking_metrics(&[RankResult { rank: 1, count: 11 }, RankResult { rank: 3, count: 11 }]).unwrap();
        assert_eq!(m.h1, 0.5);
        assert_eq!(m.h10, 1.0);
        assert!((m.mrr - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((m.mr, m.median), (2.0, 2.0));
        assert!((m.auc.unwrap() - 0.9).abs() < 1e-15);

        let m = ranking_metrics(&[RankResult { rank: 7, count: 7 }]).unwrap();
        assert_eq!(m.auc, Some(0.0));
        let m = ranking_metrics(&[RankResult { rank: 1, count: 1 }]).unwrap();
        assert_eq!(m.auc, None);
        assert!(ranking_metrics(&[]).is_err());
    }

    #[test]
    fn ties_rank_pessimistically() {
        assert_eq!(pessimistic_rank(0.5, [0.1, 0.5, 0.9]), RankResult { rank: 3, count: 4 });
        assert_eq!(pessimistic_rank(0.0, []), RankResult { rank: 1, count: 1 });
    }

    #[test]
    fn rank_ignores_candidate_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut others: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let base = pessimistic_rank(3.0, others.clone());
        for _ in 0..10 {
            others.shuffle(&mut rng);
            assert_eq!(pessimistic_rank(3.0, others.clone()), base);
        }
    }

    proptest! {
        #[test]
        fn sweep_beats_dense_grid(
            pos in proptest::collection::vec(-5.0f64..5.0, 1..20),
            neg in proptest::collection::vec(-5.0f64..5.0, 1..20),
        ) {
            let pairs = scored(&pos, &neg);
            let (t, best) = best_threshold_f1(&pairs).unwrap();
            prop_assert_eq!(f1_at_threshold(&pairs, t).f1, best);
            let (lo, hi) = (-5.0, 5.0);
            for i in 0..=10_000 {
                let g = lo + (hi - lo) * i as f64 / 10_000.0;
                prop_assert!(f1_at_threshold(&pairs, g).f1 <= best + 1e-15);
            }
        }

        #[test]
        fn correct_pair_never_hurts(
            pos in proptest::collection::vec(-5.0f64..5.0, 1..20),
            neg in proptest::collection::vec(-5.0f64..5.0, 1..20),
            t in -5.0f64..5.0,
            extra in -5.0f64..5.0,
        ) {
            let mut pairs = scored(&pos, &neg);
            let before = f1_at_threshold(&pairs, t).f1;
            // a positive below t or a negative above t is classified correctly
            pairs.push(Scored::new(extra, extra <= t));
            prop_assert!(f1_at_threshold(&pairs, t).f1 >= before);
        }
    }
}
