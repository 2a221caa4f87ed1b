//! Ranking metrics: AUC, MRR, nDCG@k, averaged per impression.
//!
//! Ties are broken by descending score then ascending item id, so every
//! metric is deterministic.

use crate::model::ItemId;

/// Metrics averaged over impressions; all values lie in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    /// Impressions that contributed to the averages.
    pub impressions: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Count single-class impressions (all positive) for nDCG/MRR even
    /// though they cannot contribute to AUC.
    pub count_single_class_ndcg: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            count_single_class_ndcg: false,
        }
    }
}

/// One impression's scored candidates.
pub struct ScoredImpression {
    pub items: Vec<(ItemId, f64, bool)>,
}

struct ImpressionMetrics {
    auc: Option<f64>,
    mrr: f64,
    ndcg5: f64,
    ndcg10: f64,
}

fn rank_order(items: &[(ItemId, f64, bool)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| {
        items[b]
            .1
            .partial_cmp(&items[a].1)
            .expect("finite scores")
            .then(items[a].0.cmp(&items[b].0))
    });
    idx
}

fn dcg_at(labels: &[bool], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &y)| y)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

fn impression_metrics(imp: &ScoredImpression) -> Option<ImpressionMetrics> {
    let order = rank_order(&imp.items);
    let labels: Vec<bool> = order.iter().map(|&i| imp.items[i].2).collect();
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return None;
    }
    let negatives = labels.len() - positives;

    // AUC from the rank statistic over the deterministic total order.
    let auc = if negatives == 0 {
        None
    } else {
        let rank_sum: usize = labels
            .iter()
            .rev() // ascending ranks
            .enumerate()
            .filter(|(_, &y)| y)
            .map(|(i, _)| i + 1)
            .sum();
        Some(
            (rank_sum as f64 - (positives * (positives + 1)) as f64 / 2.0)
                / (positives * negatives) as f64,
        )
    };

    let mrr = labels
        .iter()
        .enumerate()
        .filter(|(_, &y)| y)
        .map(|(i, _)| 1.0 / (i + 1) as f64)
        .sum::<f64>()
        / positives as f64;

    let ideal5 = (0..positives.min(5))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum::<f64>();
    let ideal10 = (0..positives.min(10))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum::<f64>();
    Some(ImpressionMetrics {
        auc,
        mrr,
        ndcg5: dcg_at(&labels, 5) / ideal5,
        ndcg10: dcg_at(&labels, 10) / ideal10,
    })
}

/// Average the four metrics over scored impressions.
pub fn evaluate_scored(impressions: &[ScoredImpression], opts: &EvalOptions) -> EvalResult {
    let mut auc_sum = 0.0;
    let mut auc_n = 0usize;
    let mut mrr_sum = 0.0;
    let mut ndcg5_sum = 0.0;
    let mut ndcg10_sum = 0.0;
    let mut rank_n = 0usize;
    for imp in impressions {
        let Some(m) = impression_metrics(imp) else {
            continue;
        };
        if let Some(a) = m.auc {
            auc_sum += a;
            auc_n += 1;
        } else if !opts.count_single_class_ndcg {
            continue;
        }
        mrr_sum += m.mrr;
        ndcg5_sum += m.ndcg5;
        ndcg10_sum += m.ndcg10;
        rank_n += 1;
    }
    EvalResult {
        auc: if auc_n == 0 { 0.5 } else { auc_sum / auc_n as f64 },
        mrr: if rank_n == 0 { 0.0 } else { mrr_sum / rank_n as f64 },
        ndcg5: if rank_n == 0 { 0.0 } else { ndcg5_sum / rank_n as f64 },
        ndcg10: if rank_n == 0 { 0.0 } else { ndcg10_sum / rank_n as f64 },
        impressions: rank_n.max(auc_n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imp(items: &[(u32, f64, bool)]) -> ScoredImpression {
        ScoredImpression {
            items: items.iter().map(|&(i, s, y)| (ItemId(i), s, y)).collect(),
        }
    }

    #[test]
    fn positive_above_all_negatives_is_perfect() {
        let r = evaluate_scored(
            &[imp(&[(0, 5.0, true), (1, 1.0, false), (2, 0.5, false)])],
            &EvalOptions::default(),
        );
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.ndcg5, 1.0);
        assert_eq!(r.ndcg10, 1.0);
    }

    #[test]
    fn positive_ranked_second_of_five_has_mrr_half() {
        let r = evaluate_scored(
            &[imp(&[
                (0, 5.0, false),
                (1, 4.0, true),
                (2, 3.0, false),
                (3, 2.0, false),
                (4, 1.0, false),
            ])],
            &EvalOptions::default(),
        );
        assert_eq!(r.mrr, 0.5);
        assert_eq!(r.auc, 0.75);
    }

    #[test]
    fn single_positive_at_rank_three_has_ndcg5_half() {
        let r = evaluate_scored(
            &[imp(&[
                (0, 5.0, false),
                (1, 4.0, false),
                (2, 3.0, true),
                (3, 2.0, false),
                (4, 1.0, false),
            ])],
            &EvalOptions::default(),
        );
        // 1/log2(4) = 0.5 against an ideal of 1/log2(2).
        assert_eq!(r.ndcg5, 0.5);
    }

    #[test]
    fn ties_break_by_item_id_deterministically() {
        // Equal scores: item 0 outranks item 1.
        let r = evaluate_scored(
            &[imp(&[(0, 1.0, false), (1, 1.0, true)])],
            &EvalOptions::default(),
        );
        assert_eq!(r.mrr, 0.5);
        let r = evaluate_scored(
            &[imp(&[(0, 1.0, true), (1, 1.0, false)])],
            &EvalOptions::default(),
        );
        assert_eq!(r.mrr, 1.0);
    }

    #[test]
    fn unrankable_impressions_follow_the_convention_flag() {
        let no_positive = imp(&[(0, 1.0, false)]);
        let all_positive = imp(&[(0, 1.0, true), (1, 0.5, true)]);
        let r = evaluate_scored(&[no_positive, all_positive], &EvalOptions::default());
        assert_eq!(r.impressions, 0);
        let r = evaluate_scored(
            &[imp(&[(0, 1.0, true), (1, 0.5, true)])],
            &EvalOptions {
                count_single_class_ndcg: true,
            },
        );
        assert_eq!(r.impressions, 1);
        assert_eq!(r.ndcg5, 1.0);
    }

    #[test]
    fn random_scores_on_balanced_impressions_hover_at_half() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(77);
        let impressions: Vec<ScoredImpression> = (0..2000)
            .map(|_| {
                ScoredImpression {
                    items: (0..10u32)
                        .map(|i| (ItemId(i), rng.random_range(-1.0..1.0), i < 5))
                        .collect(),
                }
            })
            .collect();
        let r = evaluate_scored(&impressions, &EvalOptions::default());
        assert!((r.auc - 0.5).abs() <= 0.02, "auc {}", r.auc);
        assert!(r.auc >= 0.0 && r.auc <= 1.0);
        assert!(r.mrr >= 0.0 && r.mrr <= 1.0);
        assert!(r.ndcg5 >= 0.0 && r.ndcg5 <= 1.0);
        assert!(r.ndcg10 >= 0.0 && r.ndcg10 <= 1.0);
    }
}
