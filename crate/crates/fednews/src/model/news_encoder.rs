//! Item encoder: token embedding lookup, linear projection, pooling.

use std::collections::BTreeMap;

use crate::error::ModelError;
use crate::linalg::{axpy, dot, softmax_inplace, softmax_backward, Mat};

use super::{ItemId, NewsContent, NewsEncoderParams, NewsRepr, Pooling};

/// Encode one item's tokens into a d-dimensional representation.
///
/// Projection is applied per token and the projected vectors are pooled, so
/// mean pooling is identical to projecting the mean token embedding.
pub fn encode_news(
    params: &NewsEncoderParams,
    content: &NewsContent,
) -> Result<NewsRepr, ModelError> {
    let (vec, _) = encode_news_cached(params, content)?;
    Ok(NewsRepr {
        id: content.id,
        vec,
    })
}

pub(crate) struct NewsEncodeCache {
    /// Projected token vectors, one per token occurrence.
    projected: Vec<Vec<f64>>,
    /// Attention weights when pooling is `Attention`.
    attn: Option<Vec<f64>>,
}

pub(crate) fn encode_news_cached(
    params: &NewsEncoderParams,
    content: &NewsContent,
) -> Result<(Vec<f64>, NewsEncodeCache), ModelError> {
    if content.tokens.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let vocab = params.token_embeddings.rows();
    let mut projected = Vec::with_capacity(content.tokens.len());
    for &tok in &content.tokens {
        if tok as usize >= vocab {
            return Err(ModelError::TokenOutOfRange { token: tok, vocab });
        }
        projected.push(params.projection.vecmat(params.token_embeddings.row(tok as usize)));
    }
    let d = params.projection.cols();
    match params.pooling {
        Pooling::Mean => {
            let mut out = vec![0.0; d];
            let w = 1.0 / projected.len() as f64;
            for p in &projected {
                axpy(&mut out, w, p);
            }
            Ok((out, NewsEncodeCache { projected, attn: None }))
        }
        Pooling::Attention => {
            let mut scores: Vec<f64> = projected
                .iter()
                .map(|p| dot(&params.attention_query, p))
                .collect();
            softmax_inplace(&mut scores);
            let mut out = vec![0.0; d];
            for (a, p) in scores.iter().zip(&projected) {
                axpy(&mut out, *a, p);
            }
            Ok((
                out,
                NewsEncodeCache {
                    projected,
                    attn: Some(scores),
                },
            ))
        }
    }
}

/// Chain-rule accumulation of representation gradients back onto the encoder
/// parameters, summed over every item in `contents` that has a gradient.
///
/// Returns the gradient in the encoder's flat layout. Linear in `repr_grads`.
pub fn news_encoder_backward(
    params: &NewsEncoderParams,
    contents: &[NewsContent],
    repr_grads: &BTreeMap<ItemId, Vec<f64>>,
) -> Result<Vec<f64>, ModelError> {
    let mut g_emb = Mat::zeros(params.token_embeddings.rows(), params.token_embeddings.cols());
    let mut g_proj = Mat::zeros(params.projection.rows(), params.projection.cols());
    let mut g_query = vec![0.0; params.attention_query.len()];

    let by_id: BTreeMap<ItemId, &NewsContent> = contents.iter().map(|c| (c.id, c)).collect();
    for (id, g) in repr_grads {
        let content = by_id.get(id).ok_or(ModelError::MissingRepr(id.0))?;
        if g.len() != params.projection.cols() {
            return Err(ModelError::DimMismatch {
                expected: params.projection.cols(),
                got: g.len(),
            });
        }
        let (_, cache) = encode_news_cached(params, content)?;
        // Per-token gradient of the pooled output wrt each projected vector.
        let n_tok = cache.projected.len();
        let d_projected: Vec<Vec<f64>> = match (&params.pooling, &cache.attn) {
            (Pooling::Mean, _) => {
                let w = 1.0 / n_tok as f64;
                (0..n_tok).map(|_| g.iter().map(|x| x * w).collect()).collect()
            }
            (Pooling::Attention, Some(alpha)) => {
                // out = sum_t alpha_t p_t, z_t = q . p_t
                let d_alpha: Vec<f64> =
                    cache.projected.iter().map(|p| dot(g, p)).collect();
                let dz = softmax_backward(alpha, &d_alpha);
                for (t, p) in cache.projected.iter().enumerate() {
                    axpy(&mut g_query, dz[t], p);
                }
                cache
                    .projected
                    .iter()
                    .enumerate()
                    .map(|(t, _)| {
                        let mut dp: Vec<f64> = g.iter().map(|x| x * alpha[t]).collect();
                        axpy(&mut dp, dz[t], &params.attention_query);
                        dp
                    })
                    .collect()
            }
            (Pooling::Attention, None) => unreachable!("attention cache always populated"),
        };
        for (t, &tok) in content.tokens.iter().enumerate() {
            let emb = params.token_embeddings.row(tok as usize);
            // p_t = emb @ projection
            g_proj.add_outer(emb, &d_projected[t], 1.0);
            let d_emb = params.projection.matvec(&d_projected[t]);
            axpy(g_emb.row_mut(tok as usize), 1.0, &d_emb);
        }
    }

    let mut flat = Vec::with_capacity(
        g_emb.data().len() + g_proj.data().len() + g_query.len(),
    );
    flat.extend_from_slice(g_emb.data());
    flat.extend_from_slice(g_proj.data());
    flat.extend_from_slice(&g_query);
    Ok(flat)
}
