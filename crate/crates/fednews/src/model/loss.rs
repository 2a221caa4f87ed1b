//! Click scoring, cross-entropy loss, and the client-side gradient pass.

use std::collections::BTreeMap;

use crate::error::ModelError;
use crate::linalg::{axpy, dot, softmax_inplace};

use super::{
    encode_user_cached, user_backward, ItemId, LocalGradients, TrainingSample, UserModelParams,
};

/// Dot-product click score.
pub fn score(user_vec: &[f64], cand_vec: &[f64]) -> Result<f64, ModelError> {
    if user_vec.len() != cand_vec.len() {
        return Err(ModelError::DimMismatch {
            expected: user_vec.len(),
            got: cand_vec.len(),
        });
    }
    Ok(dot(user_vec, cand_vec))
}

/// Categorical cross-entropy of the labelled candidate among `K+1` scores.
pub fn sample_loss(scores: &[f64], label_index: usize) -> Result<f64, ModelError> {
    if label_index >= scores.len() {
        return Err(ModelError::BadLabel {
            label: label_index,
            candidates: scores.len(),
        });
    }
    let mut p = scores.to_vec();
    softmax_inplace(&mut p);
    // log of the max-shifted softmax; p[label] > 0 because exp never underflows
    // to zero after the shift unless the gap itself overflows.
    Ok(-p[label_index].max(f64::MIN_POSITIVE).ln())
}

/// Loss plus gradient wrt the scores: `softmax(scores) - onehot(label)`.
fn sample_loss_grad(scores: &[f64], label_index: usize) -> Result<(f64, Vec<f64>), ModelError> {
    if label_index >= scores.len() {
        return Err(ModelError::BadLabel {
            label: label_index,
            candidates: scores.len(),
        });
    }
    let mut p = scores.to_vec();
    softmax_inplace(&mut p);
    let loss = -p[label_index].max(f64::MIN_POSITIVE).ln();
    p[label_index] -= 1.0;
    Ok((loss, p))
}

fn gather<'a>(
    reprs: &'a BTreeMap<ItemId, Vec<f64>>,
    ids: &[ItemId],
) -> Result<Vec<&'a Vec<f64>>, ModelError> {
    ids.iter()
        .map(|id| reprs.get(id).ok_or(ModelError::MissingRepr(id.0)))
        .collect()
}

/// Mean cross-entropy over a client's samples.
pub fn user_loss(
    samples: &[TrainingSample],
    params: &UserModelParams,
    reprs: &BTreeMap<ItemId, Vec<f64>>,
) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for s in samples {
        let hist: Vec<Vec<f64>> = gather(reprs, &s.history)?
            .into_iter()
            .cloned()
            .collect();
        let (u, _) = encode_user_cached(params, &hist);
        let cands = gather(reprs, &s.candidates)?;
        let scores: Vec<f64> = cands.iter().map(|c| dot(&u, c)).collect();
        total += sample_loss(&scores, s.label_index)?;
    }
    Ok(total / samples.len() as f64)
}

/// Gradient pass for one sample over explicit history/candidate vectors.
///
/// Returns (loss, user-model grads, per-history-position grads,
/// per-candidate-position grads). The caller owns accumulation and any
/// input masking.
pub(crate) fn sample_backward(
    params: &UserModelParams,
    hist_vecs: &[Vec<f64>],
    cand_vecs: &[&Vec<f64>],
    label_index: usize,
) -> Result<(f64, UserModelParams, Vec<Vec<f64>>, Vec<Vec<f64>>), ModelError> {
    let (u, cache) = encode_user_cached(params, hist_vecs);
    let scores: Vec<f64> = cand_vecs.iter().map(|c| dot(&u, c)).collect();
    let (loss, d_scores) = sample_loss_grad(&scores, label_index)?;

    let d = u.len();
    let mut d_u = vec![0.0; d];
    let mut d_cands = Vec::with_capacity(cand_vecs.len());
    for (ds, cand) in d_scores.iter().zip(cand_vecs) {
        axpy(&mut d_u, *ds, cand);
        d_cands.push(u.iter().map(|&x| ds * x).collect());
    }
    let (param_grads, d_hist) = user_backward(params, &cache, &d_u);
    Ok((loss, param_grads, d_hist, d_cands))
}

/// Analytic gradients of [`user_loss`] wrt the user model and wrt every item
/// representation the samples touch. Items never referenced get no entry.
pub fn backward(
    samples: &[TrainingSample],
    params: &UserModelParams,
    reprs: &BTreeMap<ItemId, Vec<f64>>,
) -> Result<LocalGradients, ModelError> {
    backward_with_loss(samples, params, reprs).map(|(g, _)| g)
}

/// [`backward`] plus the mean loss from the same forward passes.
pub fn backward_with_loss(
    samples: &[TrainingSample],
    params: &UserModelParams,
    reprs: &BTreeMap<ItemId, Vec<f64>>,
) -> Result<(LocalGradients, f64), ModelError> {
    backward_masked(samples, params, reprs, None)
}

/// Gradient pass with inverted dropout on the history inputs. The mask is
/// drawn per history position and applied consistently in the forward and
/// backward directions, so the gradients are exact for the dropped network.
/// Dropout breaks the pooled-gradient equivalence with centralized training.
pub fn backward_dropout(
    samples: &[TrainingSample],
    params: &UserModelParams,
    reprs: &BTreeMap<ItemId, Vec<f64>>,
    rate: f64,
    rng: &mut impl rand::Rng,
) -> Result<(LocalGradients, f64), ModelError> {
    backward_masked(samples, params, reprs, Some((rate, rng)))
}

fn backward_masked(
    samples: &[TrainingSample],
    params: &UserModelParams,
    reprs: &BTreeMap<ItemId, Vec<f64>>,
    mut dropout: Option<(f64, &mut dyn rand::Rng)>,
) -> Result<(LocalGradients, f64), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let dims = params.dims;
    let mut user_grad = vec![0.0; dims.user_param_len()];
    let mut repr_grads: BTreeMap<ItemId, Vec<f64>> = BTreeMap::new();
    let mut loss_sum = 0.0;
    let mut add_repr = |id: ItemId, g: &[f64]| {
        let slot = repr_grads
            .entry(id)
            .or_insert_with(|| vec![0.0; dims.repr_dim]);
        axpy(slot, 1.0, g);
    };

    for s in samples {
        let mut hist: Vec<Vec<f64>> = gather(reprs, &s.history)?
            .into_iter()
            .cloned()
            .collect();
        // Per-coordinate inverted dropout masks, remembered for backward.
        let masks: Option<Vec<Vec<f64>>> = match &mut dropout {
            Some((rate, rng)) if *rate > 0.0 => {
                use rand::RngExt;
                let keep = 1.0 - *rate;
                let masks: Vec<Vec<f64>> = hist
                    .iter()
                    .map(|v| {
                        v.iter()
                            .map(|_| {
                                if rng.random_range(0.0..1.0) < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                for (v, m) in hist.iter_mut().zip(&masks) {
                    for (x, &mm) in v.iter_mut().zip(m) {
                        *x *= mm;
                    }
                }
                Some(masks)
            }
            _ => None,
        };

        let cands = gather(reprs, &s.candidates)?;
        let (loss, param_grads, mut d_hist, d_cands) =
            sample_backward(params, &hist, &cands, s.label_index)?;
        loss_sum += loss;
        if let Some(masks) = &masks {
            for (g, m) in d_hist.iter_mut().zip(masks) {
                for (x, &mm) in g.iter_mut().zip(m) {
                    *x *= mm;
                }
            }
        }
        axpy(&mut user_grad, 1.0, &param_grads.flatten());
        for (id, g) in s.history.iter().zip(&d_hist) {
            add_repr(*id, g);
        }
        for (id, g) in s.candidates.iter().zip(&d_cands) {
            add_repr(*id, g);
        }
    }

    let inv = 1.0 / samples.len() as f64;
    let mut out = LocalGradients {
        user_grad,
        repr_grads,
        sample_count: samples.len(),
    };
    out.scale(inv);
    Ok((out, loss_sum * inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use rand::SeedableRng;

    #[test]
    fn score_is_a_dot_product() {
        assert_eq!(score(&[0.0, 0.0], &[3.0, 9.0]).unwrap(), 0.0);
        assert_eq!(score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(score(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(
            score(&[1.0], &[1.0, 2.0]),
            Err(ModelError::DimMismatch { .. })
        ));
    }

    #[test]
    fn sample_loss_reference_values() {
        // Uniform scores over 5 candidates.
        let l = sample_loss(&[2.0; 5], 0).unwrap();
        assert!((l - 1.6094379124341003).abs() < 1e-12);
        // Saturated softmax.
        let l = sample_loss(&[60.0, 0.0, 5.0, -2.0, 1.0], 0).unwrap();
        assert!(l < 1e-20);
        // Frozen from the independent softmax cross-entropy oracle.
        let l = sample_loss(&[1.0, 0.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert!((l - 0.904832441554448).abs() < 1e-12);
    }

    #[test]
    fn softmax_probabilities_sum_to_one() {
        let scores = [3.2, -1.0, 0.5, 700.0, -700.0];
        let mut p = scores.to_vec();
        softmax_inplace(&mut p);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    fn toy_setup() -> (
        ModelDims,
        UserModelParams,
        BTreeMap<ItemId, Vec<f64>>,
        Vec<TrainingSample>,
    ) {
        let dims = ModelDims {
            vocab_size: 1,
            token_dim: 1,
            repr_dim: 4,
            heads: 2,
            attn_hidden: 3,
        };
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let params = UserModelParams::init(&dims, &mut rng);
        let mut reprs = BTreeMap::new();
        for i in 0..6u32 {
            let v: Vec<f64> = (0..4)
                .map(|c| (((i as usize * 4 + c) * 7 + 3) % 11) as f64 / 11.0 - 0.5)
                .collect();
            reprs.insert(ItemId(i), v);
        }
        let samples = vec![
            TrainingSample {
                history: vec![ItemId(0), ItemId(1)],
                candidates: vec![ItemId(2), ItemId(3), ItemId(4)],
                label_index: 0,
            },
            TrainingSample {
                history: vec![ItemId(2)],
                candidates: vec![ItemId(5), ItemId(0), ItemId(1)],
                label_index: 1,
            },
            TrainingSample {
                history: vec![ItemId(3), ItemId(5), ItemId(1)],
                candidates: vec![ItemId(4), ItemId(2), ItemId(0)],
                label_index: 2,
            },
        ];
        (dims, params, reprs, samples)
    }

    #[test]
    fn user_loss_is_the_sample_mean() {
        let (_, params, reprs, samples) = toy_setup();
        let single = user_loss(&samples[..1], &params, &reprs).unwrap();
        let per_sample: Vec<f64> = samples
            .iter()
            .map(|s| user_loss(std::slice::from_ref(s), &params, &reprs).unwrap())
            .collect();
        assert_eq!(single, per_sample[0]);
        // Two identical samples average to the single-sample loss.
        let dup = vec![samples[0].clone(), samples[0].clone()];
        let l = user_loss(&dup, &params, &reprs).unwrap();
        assert!((l - per_sample[0]).abs() < 1e-15);
        // Three distinct samples: plain arithmetic mean.
        let l = user_loss(&samples, &params, &reprs).unwrap();
        let mean = per_sample.iter().sum::<f64>() / 3.0;
        assert!((l - mean).abs() < 1e-12);
        assert!(l >= 0.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (_, params, reprs, _) = toy_setup();
        assert!(matches!(
            user_loss(&[], &params, &reprs),
            Err(ModelError::EmptyBatch)
        ));
        assert!(matches!(
            backward(&[], &params, &reprs),
            Err(ModelError::EmptyBatch)
        ));
    }

    #[test]
    fn missing_repr_is_a_protocol_error() {
        let (_, params, mut reprs, samples) = toy_setup();
        reprs.remove(&ItemId(4));
        assert!(matches!(
            backward(&samples, &params, &reprs),
            Err(ModelError::MissingRepr(4))
        ));
    }

    #[test]
    fn zero_params_and_zero_reprs_give_zero_gradients() {
        let (dims, _, _, _) = toy_setup();
        let params = UserModelParams::zeros(&dims);
        let mut reprs = BTreeMap::new();
        for i in 0..6u32 {
            reprs.insert(ItemId(i), vec![0.0; 4]);
        }
        let samples = vec![TrainingSample {
            history: vec![ItemId(0)],
            candidates: vec![ItemId(1), ItemId(2)],
            label_index: 0,
        }];
        let g = backward(&samples, &params, &reprs).unwrap();
        assert!(g.user_grad.iter().all(|&x| x == 0.0));
        // Scores are all zero; softmax is uniform; candidate grads flow from
        // (p - y) * u with u = 0, so every repr grad is exactly zero too.
        for v in g.repr_grads.values() {
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let (_, params, reprs, samples) = toy_setup();
        let a = backward(&samples, &params, &reprs).unwrap();
        let b = backward(&samples, &params, &reprs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untouched_items_have_no_gradient_entry() {
        let (_, params, mut reprs, _) = toy_setup();
        reprs.insert(ItemId(99), vec![0.1; 4]);
        let samples = vec![TrainingSample {
            history: vec![ItemId(0)],
            candidates: vec![ItemId(1), ItemId(2)],
            label_index: 0,
        }];
        let g = backward(&samples, &params, &reprs).unwrap();
        assert!(!g.repr_grads.contains_key(&ItemId(99)));
        assert_eq!(
            g.repr_grads.keys().cloned().collect::<Vec<_>>(),
            vec![ItemId(0), ItemId(1), ItemId(2)]
        );
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let (dims, params, reprs, samples) = toy_setup();
        let g = backward(&samples, &params, &reprs).unwrap();
        let h = 1e-5;

        // Wrt user-model parameters.
        let flat = params.flatten();
        for i in 0..flat.len() {
            let mut pp = flat.clone();
            let mut pm = flat.clone();
            pp[i] += h;
            pm[i] -= h;
            let fp = user_loss(
                &samples,
                &UserModelParams::from_flat(&dims, &pp).unwrap(),
                &reprs,
            )
            .unwrap();
            let fm = user_loss(
                &samples,
                &UserModelParams::from_flat(&dims, &pm).unwrap(),
                &reprs,
            )
            .unwrap();
            let num = (fp - fm) / (2.0 * h);
            let ana = g.user_grad[i];
            let err = (num - ana).abs();
            assert!(
                err <= 1e-7 + 1e-4 * ana.abs().max(num.abs()),
                "param {i}: {num} vs {ana}"
            );
        }

        // Wrt item representations.
        for (&id, ana_vec) in &g.repr_grads {
            for c in 0..dims.repr_dim {
                let mut rp = reprs.clone();
                let mut rm = reprs.clone();
                rp.get_mut(&id).unwrap()[c] += h;
                rm.get_mut(&id).unwrap()[c] -= h;
                let fp = user_loss(&samples, &params, &rp).unwrap();
                let fm = user_loss(&samples, &params, &rm).unwrap();
                let num = (fp - fm) / (2.0 * h);
                let ana = ana_vec[c];
                let err = (num - ana).abs();
                assert!(
                    err <= 1e-7 + 1e-4 * ana.abs().max(num.abs()),
                    "repr {id} coord {c}: {num} vs {ana}"
                );
            }
        }
    }
}
