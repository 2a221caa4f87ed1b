//! Behavior stores, corpora, and dataset assembly.
//!
//! Per-user data lives in its own [`ClientStore`] and never leaves it during
//! training; the evaluation impressions are a centralized test-only view
//! used by the measurement harness.

mod mind;
mod synthetic;

pub use mind::{convert_click_log, load_mind, LoadOptions, MindStats};
pub use synthetic::{gen_synthetic, SyntheticSpec, SyntheticTruth};

use std::collections::{BTreeMap, BTreeSet};

use rand::{seq::index::sample as index_sample, Rng, RngExt};

use crate::model::{ItemId, NewsContent, TrainingSample, UserId};

/// The item corpus: dense ids internally, external ids preserved for I/O.
#[derive(Debug, Clone)]
pub struct Corpus {
    items: Vec<NewsContent>,
    external_ids: Vec<String>,
    by_external: BTreeMap<String, ItemId>,
    vocab_size: usize,
}

impl Corpus {
    pub fn new(items: Vec<NewsContent>, external_ids: Vec<String>, vocab_size: usize) -> Self {
        let by_external = external_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), ItemId(i as u32)))
            .collect();
        Corpus {
            items,
            external_ids,
            by_external,
            vocab_size,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ItemId) -> &NewsContent {
        &self.items[id.index()]
    }

    pub fn contents(&self) -> &[NewsContent] {
        &self.items
    }

    pub fn external_id(&self, id: ItemId) -> &str {
        &self.external_ids[id.index()]
    }

    pub fn lookup(&self, external: &str) -> Option<ItemId> {
        self.by_external.get(external).copied()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

/// One logged recommendation event: candidates with click labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Impression {
    pub items: Vec<(ItemId, bool)>,
}

/// A user's locally stored click history and impression logs.
#[derive(Debug, Clone)]
pub struct Behavior {
    pub user: UserId,
    pub history: Vec<ItemId>,
    pub impressions: Vec<Impression>,
}

/// Training-ready per-client container. Lives on the client; only gradients
/// derived from it ever reach the wire.
#[derive(Debug, Clone)]
pub struct ClientStore {
    pub user: UserId,
    pub history: Vec<ItemId>,
    pub samples: Vec<TrainingSample>,
    /// Every item this client's behaviors touch; its contribution to the
    /// union set.
    pub news_set: BTreeSet<ItemId>,
}

impl ClientStore {
    pub fn from_behavior(
        behavior: &Behavior,
        neg_ratio: usize,
        history_max: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let history = truncate_history(&behavior.history, history_max);
        let mut samples = Vec::new();
        for imp in &behavior.impressions {
            samples.extend(negative_sample(&history, imp, neg_ratio, rng));
        }
        let mut news_set: BTreeSet<ItemId> = history.iter().copied().collect();
        for imp in &behavior.impressions {
            news_set.extend(imp.items.iter().map(|(id, _)| *id));
        }
        ClientStore {
            user: behavior.user,
            history,
            samples,
            news_set,
        }
    }
}

/// Held-out impression for the evaluation harness (test-only view).
#[derive(Debug, Clone)]
pub struct EvalImpression {
    pub user: UserId,
    pub history: Vec<ItemId>,
    pub candidates: Vec<(ItemId, bool)>,
}

/// A loaded dataset: corpus, per-client stores, and held-out splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub clients: Vec<ClientStore>,
    pub val: Vec<EvalImpression>,
    pub test: Vec<EvalImpression>,
    /// Generator ground truth, present for synthetic data.
    pub truth: Option<SyntheticTruth>,
}

/// Keep the most recent `max` clicks.
pub fn truncate_history(history: &[ItemId], max: usize) -> Vec<ItemId> {
    if history.len() <= max {
        history.to_vec()
    } else {
        history[history.len() - max..].to_vec()
    }
}

/// Build one training sample per clicked candidate: `k` negatives drawn from
/// the same impression, without replacement when enough exist, with
/// replacement otherwise. Impressions with no negatives yield nothing.
pub fn negative_sample(
    history: &[ItemId],
    impression: &Impression,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<TrainingSample> {
    let positives: Vec<ItemId> = impression
        .items
        .iter()
        .filter(|(_, y)| *y)
        .map(|(id, _)| *id)
        .collect();
    let negatives: Vec<ItemId> = impression
        .items
        .iter()
        .filter(|(_, y)| !*y)
        .map(|(id, _)| *id)
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(positives.len());
    for pos in positives {
        let negs: Vec<ItemId> = if negatives.len() >= k {
            index_sample(rng, negatives.len(), k)
                .iter()
                .map(|i| negatives[i])
                .collect()
        } else {
            (0..k)
                .map(|_| negatives[rng.random_range(0..negatives.len())])
                .collect()
        };
        let mut candidates = Vec::with_capacity(k + 1);
        candidates.push(pos);
        candidates.extend(negs);
        out.push(TrainingSample {
            history: history.to_vec(),
            candidates,
            label_index: 0,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn imp(items: &[(u32, bool)]) -> Impression {
        Impression {
            items: items.iter().map(|&(id, y)| (ItemId(id), y)).collect(),
        }
    }

    #[test]
    fn exact_negatives_are_used_when_counts_match() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let samples = negative_sample(
            &[ItemId(9)],
            &imp(&[(1, true), (2, false), (3, false), (4, false), (5, false)]),
            4,
            &mut rng,
        );
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.candidates[0], ItemId(1));
        assert_eq!(s.label_index, 0);
        let mut negs: Vec<u32> = s.candidates[1..].iter().map(|i| i.0).collect();
        negs.sort_unstable();
        assert_eq!(negs, vec![2, 3, 4, 5]);
    }

    #[test]
    fn two_positives_give_two_samples() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let samples = negative_sample(
            &[],
            &imp(&[(1, true), (2, true), (3, false), (4, false)]),
            2,
            &mut rng,
        );
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].candidates[0], ItemId(1));
        assert_eq!(samples[1].candidates[0], ItemId(2));
    }

    #[test]
    fn scarce_negatives_are_resampled_with_replacement() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let samples = negative_sample(
            &[],
            &imp(&[(1, true), (2, false), (3, false)]),
            4,
            &mut rng,
        );
        assert_eq!(samples[0].candidates.len(), 5);
        for id in &samples[0].candidates[1..] {
            assert!(matches!(id.0, 2 | 3));
        }
    }

    #[test]
    fn no_negatives_skips_the_impression() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        assert!(negative_sample(&[], &imp(&[(1, true)]), 4, &mut rng).is_empty());
    }

    #[test]
    fn history_truncation_keeps_the_most_recent() {
        let hist: Vec<ItemId> = (0..10).map(ItemId).collect();
        let t = truncate_history(&hist, 3);
        assert_eq!(t, vec![ItemId(7), ItemId(8), ItemId(9)]);
    }

    #[test]
    fn client_store_collects_the_full_news_set() {
        let behavior = Behavior {
            user: UserId(0),
            history: vec![ItemId(1), ItemId(2)],
            impressions: vec![imp(&[(3, true), (4, false), (5, false)])],
        };
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let store = ClientStore::from_behavior(&behavior, 2, 50, &mut rng);
        let expect: BTreeSet<ItemId> = [1, 2, 3, 4, 5].map(ItemId).into();
        assert_eq!(store.news_set, expect);
        assert_eq!(store.samples.len(), 1);
    }
}
