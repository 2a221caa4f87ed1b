//! The recommendation model: item encoder, attention user encoder, scoring,
//! loss, and exact analytic gradients.
//!
//! The item (news) encoder lives on the server; the user encoder is the
//! light-weight model shared with clients. Everything here is a pure function
//! of its inputs, so values can be shared or sent between threads freely.

mod loss;
mod news_encoder;
mod user_encoder;

pub use loss::{
    backward, backward_dropout, backward_with_loss, sample_loss, score, user_loss,
};
pub use news_encoder::{encode_news, news_encoder_backward};
pub use user_encoder::encode_user;

pub(crate) use user_encoder::{encode_user_cached, user_backward};

use std::collections::BTreeMap;

use rand::RngExt;

use crate::error::ModelError;
use crate::linalg::Mat;

/// Dense item identifier (position in the corpus).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub u32);

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for ItemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dense user identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u32);

impl UserId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for UserId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Model shape shared by every component of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Vocabulary size |V| of the item encoder.
    pub vocab_size: usize,
    /// Token embedding width.
    pub token_dim: usize,
    /// Item representation width `d`.
    pub repr_dim: usize,
    /// Self-attention head count `h`; must divide `repr_dim`.
    pub heads: usize,
    /// Hidden width of the additive attention pooler.
    pub attn_hidden: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || self.repr_dim % self.heads != 0 {
            return Err(ModelError::DimMismatch {
                expected: self.heads.max(1),
                got: self.repr_dim,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn head_dim(&self) -> usize {
        self.repr_dim / self.heads
    }

    /// Flat length of [`UserModelParams`].
    pub fn user_param_len(&self) -> usize {
        3 * self.repr_dim * self.repr_dim + self.repr_dim * self.attn_hidden + self.attn_hidden
    }

    /// Flat length of [`NewsEncoderParams`].
    pub fn encoder_param_len(&self) -> usize {
        self.vocab_size * self.token_dim + self.token_dim * self.repr_dim + self.repr_dim
    }
}

/// How the item encoder pools projected token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Arithmetic mean of projected token embeddings.
    #[default]
    Mean,
    /// Softmax attention over projected tokens with the learned query.
    Attention,
}

/// Tokenized item content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewsContent {
    pub id: ItemId,
    pub tokens: Vec<u32>,
}

/// A d-dimensional item representation.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsRepr {
    pub id: ItemId,
    pub vec: Vec<f64>,
}

/// Server-side item encoder parameters.
///
/// Flat layout (row-major, in this order): `token_embeddings`, `projection`,
/// `attention_query`. On disk the flat vector is little-endian `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsEncoderParams {
    pub token_embeddings: Mat, // |V| x token_dim
    pub projection: Mat,       // token_dim x repr_dim
    pub attention_query: Vec<f64>, // repr_dim; used by attention pooling
    pub pooling: Pooling,
}

impl NewsEncoderParams {
    pub fn zeros(dims: &ModelDims) -> Self {
        NewsEncoderParams {
            token_embeddings: Mat::zeros(dims.vocab_size, dims.token_dim),
            projection: Mat::zeros(dims.token_dim, dims.repr_dim),
            attention_query: vec![0.0; dims.repr_dim],
            pooling: Pooling::Mean,
        }
    }

    /// Seeded uniform(-0.1, 0.1) initialization.
    pub fn init(dims: &ModelDims, rng: &mut impl rand::Rng) -> Self {
        let mut p = Self::zeros(dims);
        for x in p.token_embeddings.data_mut() {
            *x = rng.random_range(-0.1..0.1);
        }
        for x in p.projection.data_mut() {
            *x = rng.random_range(-0.1..0.1);
        }
        for x in p.attention_query.iter_mut() {
            *x = rng.random_range(-0.1..0.1);
        }
        p
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.token_embeddings.data().len()
                + self.projection.data().len()
                + self.attention_query.len(),
        );
        out.extend_from_slice(self.token_embeddings.data());
        out.extend_from_slice(self.projection.data());
        out.extend_from_slice(&self.attention_query);
        out
    }

    pub fn from_flat(dims: &ModelDims, pooling: Pooling, flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != dims.encoder_param_len() {
            return Err(ModelError::DimMismatch {
                expected: dims.encoder_param_len(),
                got: flat.len(),
            });
        }
        let ne = dims.vocab_size * dims.token_dim;
        let np = dims.token_dim * dims.repr_dim;
        Ok(NewsEncoderParams {
            token_embeddings: Mat::from_vec(dims.vocab_size, dims.token_dim, flat[..ne].to_vec()),
            projection: Mat::from_vec(dims.token_dim, dims.repr_dim, flat[ne..ne + np].to_vec()),
            attention_query: flat[ne + np..].to_vec(),
            pooling,
        })
    }
}

/// One self-attention head: query/key/value projections, each `d x d/h`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
}

/// Shared user encoder parameters: multi-head self attention over the click
/// history followed by additive attention pooling.
///
/// Flat layout (row-major, in this order): for each head `query`, `key`,
/// `value`; then `attn_w`; then `attn_q`. On disk the flat vector is
/// little-endian `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserModelParams {
    pub dims: ModelDims,
    pub heads: Vec<HeadParams>,
    pub attn_w: Mat,      // repr_dim x attn_hidden
    pub attn_q: Vec<f64>, // attn_hidden
}

impl UserModelParams {
    pub fn zeros(dims: &ModelDims) -> Self {
        let dh = dims.head_dim();
        UserModelParams {
            dims: *dims,
            heads: (0..dims.heads)
                .map(|_| HeadParams {
                    query: Mat::zeros(dims.repr_dim, dh),
                    key: Mat::zeros(dims.repr_dim, dh),
                    value: Mat::zeros(dims.repr_dim, dh),
                })
                .collect(),
            attn_w: Mat::zeros(dims.repr_dim, dims.attn_hidden),
            attn_q: vec![0.0; dims.attn_hidden],
        }
    }

    /// Seeded uniform(-0.1, 0.1) initialization.
    pub fn init(dims: &ModelDims, rng: &mut impl rand::Rng) -> Self {
        let mut p = Self::zeros(dims);
        for h in p.heads.iter_mut() {
            for m in [&mut h.query, &mut h.key, &mut h.value] {
                for x in m.data_mut() {
                    *x = rng.random_range(-0.1..0.1);
                }
            }
        }
        for x in p.attn_w.data_mut() {
            *x = rng.random_range(-0.1..0.1);
        }
        for x in p.attn_q.iter_mut() {
            *x = rng.random_range(-0.1..0.1);
        }
        p
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims.user_param_len());
        for h in &self.heads {
            out.extend_from_slice(h.query.data());
            out.extend_from_slice(h.key.data());
            out.extend_from_slice(h.value.data());
        }
        out.extend_from_slice(self.attn_w.data());
        out.extend_from_slice(&self.attn_q);
        out
    }

    pub fn from_flat(dims: &ModelDims, flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != dims.user_param_len() {
            return Err(ModelError::DimMismatch {
                expected: dims.user_param_len(),
                got: flat.len(),
            });
        }
        let d = dims.repr_dim;
        let dh = dims.head_dim();
        let block = d * dh;
        let mut off = 0;
        let mut take = |n: usize| {
            let s = flat[off..off + n].to_vec();
            off += n;
            s
        };
        let heads = (0..dims.heads)
            .map(|_| HeadParams {
                query: Mat::from_vec(d, dh, take(block)),
                key: Mat::from_vec(d, dh, take(block)),
                value: Mat::from_vec(d, dh, take(block)),
            })
            .collect();
        let attn_w = Mat::from_vec(d, dims.attn_hidden, take(d * dims.attn_hidden));
        let attn_q = take(dims.attn_hidden);
        Ok(UserModelParams {
            dims: *dims,
            heads,
            attn_w,
            attn_q,
        })
    }
}

/// One impression-derived training sample: the clicked candidate plus `K`
/// non-clicked candidates from the same impression, with the click history
/// at that point in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub history: Vec<ItemId>,
    pub candidates: Vec<ItemId>,
    pub label_index: usize,
}

/// Gradients a client uploads: user-model gradient plus per-item
/// representation gradients for the items its samples touched.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGradients {
    pub user_grad: Vec<f64>,
    pub repr_grads: BTreeMap<ItemId, Vec<f64>>,
    pub sample_count: usize,
}

impl LocalGradients {
    pub fn zeros(dims: &ModelDims) -> Self {
        LocalGradients {
            user_grad: vec![0.0; dims.user_param_len()],
            repr_grads: BTreeMap::new(),
            sample_count: 0,
        }
    }

    /// Scale every gradient entry in place.
    pub fn scale(&mut self, a: f64) {
        crate::linalg::scale(&mut self.user_grad, a);
        for g in self.repr_grads.values_mut() {
            crate::linalg::scale(g, a);
        }
    }
}
