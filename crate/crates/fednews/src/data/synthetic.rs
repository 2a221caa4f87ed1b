//! Seeded synthetic corpora for desk-scale experiments.
//!
//! Users and items live in a shared latent space with cluster structure;
//! click probability rises with the latent dot product through a logistic
//! link (or a hard threshold at zero noise). Item tokens carry the item and
//! cluster identity, so the content encoder can learn the latents and the
//! task is separable by construction.

use std::collections::BTreeSet;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::DataError;
use crate::model::{ItemId, NewsContent, UserId};

use super::{Behavior, ClientStore, Corpus, Dataset, EvalImpression, Impression};

/// Generator parameters. Deterministic given `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub latent_dim: usize,
    /// Training impressions per user.
    pub clicks_per_user: usize,
    /// Candidates per impression.
    pub impression_size: usize,
    /// Logistic temperature; 0 means deterministic threshold clicks.
    pub noise: f64,
    pub seed: u64,
    pub clusters: usize,
    pub history_len: usize,
    /// Held-out impressions per user.
    pub eval_per_user: usize,
    /// Negatives per positive in the derived training samples.
    pub neg_ratio: usize,
    /// Latent dot product at which a click becomes more likely than not.
    pub margin: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 1000,
            items: 500,
            latent_dim: 8,
            clicks_per_user: 8,
            impression_size: 10,
            noise: 0.15,
            seed: 1,
            clusters: 4,
            history_len: 12,
            eval_per_user: 2,
            neg_ratio: 4,
            margin: 0.5,
        }
    }
}

impl SyntheticSpec {
    /// Load from a flat `key = value` file; unset keys take the defaults.
    pub fn from_file(path: &std::path::Path) -> Result<Self, crate::error::ConfigError> {
        let kv = crate::kv::KvFile::load(path)?;
        let d = SyntheticSpec::default();
        let spec = SyntheticSpec {
            users: kv.parse("users", d.users)?,
            items: kv.parse("items", d.items)?,
            latent_dim: kv.parse("latent_dim", d.latent_dim)?,
            clicks_per_user: kv.parse("clicks_per_user", d.clicks_per_user)?,
            impression_size: kv.parse("impression_size", d.impression_size)?,
            noise: kv.parse("noise", d.noise)?,
            seed: kv.parse("seed", d.seed)?,
            clusters: kv.parse("clusters", d.clusters)?,
            history_len: kv.parse("history_len", d.history_len)?,
            eval_per_user: kv.parse("eval_per_user", d.eval_per_user)?,
            neg_ratio: kv.parse("neg_ratio", d.neg_ratio)?,
            margin: kv.parse("margin", d.margin)?,
        };
        kv.reject_unknown()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.users == 0 || self.items == 0 {
            return Err(DataError::BadSpec("users and items must be positive".into()));
        }
        if self.impression_size < 2 {
            return Err(DataError::BadSpec(
                "impression_size must allow a positive and a negative".into(),
            ));
        }
        if self.clusters == 0 || self.latent_dim == 0 {
            return Err(DataError::BadSpec("clusters and latent_dim must be positive".into()));
        }
        if !(0.0..=10.0).contains(&self.noise) {
            return Err(DataError::BadSpec(format!("noise {} out of range", self.noise)));
        }
        Ok(())
    }
}

/// Generator ground truth, kept for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub user_latents: Vec<Vec<f64>>,
    pub item_latents: Vec<Vec<f64>>,
    pub noise: f64,
    pub margin: f64,
}

/// Probability that `user` clicks `item` under the generator link.
pub fn click_probability(truth: &SyntheticTruth, user: usize, item: usize) -> f64 {
    let dot: f64 = truth.user_latents[user]
        .iter()
        .zip(&truth.item_latents[item])
        .map(|(a, b)| a * b)
        .sum();
    let centered = dot - truth.margin;
    if truth.noise == 0.0 {
        if centered > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 / (1.0 + (-centered / truth.noise).exp())
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller from two uniforms.
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_vec(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn jittered(center: &[f64], jitter: f64, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = center.iter().map(|&c| c + jitter * normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Generate clients, corpus, held-out impressions, and ground-truth latents.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let jitter = 0.25;

    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| unit_vec(spec.latent_dim, &mut rng))
        .collect();
    let item_clusters: Vec<usize> = (0..spec.items).map(|i| i % spec.clusters).collect();
    let item_latents: Vec<Vec<f64>> = item_clusters
        .iter()
        .map(|&c| jittered(&centers[c], jitter, &mut rng))
        .collect();
    let user_clusters: Vec<usize> = (0..spec.users).map(|u| u % spec.clusters).collect();
    let user_latents: Vec<Vec<f64>> = user_clusters
        .iter()
        .map(|&c| jittered(&centers[c], jitter, &mut rng))
        .collect();

    // Tokens: one identity token per item plus one shared cluster token.
    let items: Vec<NewsContent> = (0..spec.items)
        .map(|i| NewsContent {
            id: ItemId(i as u32),
            tokens: vec![1 + i as u32, 1 + spec.items as u32 + item_clusters[i] as u32],
        })
        .collect();
    let external_ids: Vec<String> = (0..spec.items).map(|i| format!("S{i}")).collect();
    let vocab_size = 1 + spec.items + spec.clusters;
    let corpus = Corpus::new(items, external_ids, vocab_size);

    let truth = SyntheticTruth {
        user_latents,
        item_latents,
        noise: spec.noise,
        margin: spec.margin,
    };

    let draw_impression = |user: usize, rng: &mut ChaCha20Rng| -> Option<Impression> {
        for _ in 0..50 {
            let picked = rand::seq::index::sample(rng, spec.items, spec.impression_size.min(spec.items));
            let items: Vec<(ItemId, bool)> = picked
                .iter()
                .map(|i| {
                    let p = click_probability(&truth, user, i);
                    (ItemId(i as u32), rng.random_range(0.0..1.0) < p)
                })
                .collect();
            let pos = items.iter().filter(|(_, y)| *y).count();
            if pos > 0 && pos < items.len() {
                return Some(Impression { items });
            }
        }
        None
    };

    let mut clients = Vec::with_capacity(spec.users);
    let mut val = Vec::new();
    let mut test = Vec::new();
    for u in 0..spec.users {
        // History: rejection-sample items the user would plausibly click.
        let mut history_set = BTreeSet::new();
        let mut history = Vec::new();
        let mut attempts = 0;
        while history.len() < spec.history_len && attempts < spec.history_len * 60 {
            attempts += 1;
            let i = rng.random_range(0..spec.items);
            let p = click_probability(&truth, u, i);
            if rng.random_range(0.0..1.0) < p && history_set.insert(i) {
                history.push(ItemId(i as u32));
            }
        }

        let mut impressions = Vec::new();
        for _ in 0..spec.clicks_per_user {
            if let Some(imp) = draw_impression(u, &mut rng) {
                impressions.push(imp);
            }
        }
        for k in 0..spec.eval_per_user {
            if let Some(imp) = draw_impression(u, &mut rng) {
                let eval = EvalImpression {
                    user: UserId(u as u32),
                    history: history.clone(),
                    candidates: imp.items,
                };
                // Alternate the held-out impressions between val and test.
                if k % 2 == 0 {
                    val.push(eval);
                } else {
                    test.push(eval);
                }
            }
        }

        let behavior = Behavior {
            user: UserId(u as u32),
            history,
            impressions,
        };
        clients.push(ClientStore::from_behavior(
            &behavior,
            spec.neg_ratio,
            usize::MAX,
            &mut rng,
        ));
    }

    Ok(Dataset {
        corpus,
        clients,
        val,
        test,
        truth: Some(truth),
    })
}
