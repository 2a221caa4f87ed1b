//! User encoder: multi-head self attention over clicked-item representations
//! followed by additive attention pooling.
//!
//! Self attention carries no positional encoding and the pooler is
//! permutation invariant, so the user vector does not depend on history
//! order.

use crate::linalg::{axpy, dot, softmax_backward, softmax_inplace};

use super::UserModelParams;

/// Compute the user representation from the history item representations.
///
/// An empty history encodes to the zero vector: every dot-product score is
/// then 0, a neutral prediction for cold users.
pub fn encode_user(params: &UserModelParams, history: &[Vec<f64>]) -> Vec<f64> {
    encode_user_cached(params, history).0
}

pub(crate) struct HeadCache {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Row-stochastic attention, `attn[i][j]` from query i to key j.
    attn: Vec<Vec<f64>>,
}

pub(crate) struct UserEncodeCache {
    hist: Vec<Vec<f64>>,
    heads: Vec<HeadCache>,
    /// Self-attention outputs, one d-vector per history position.
    m: Vec<Vec<f64>>,
    /// tanh activations of the pooler, one attn_hidden-vector per position.
    t: Vec<Vec<f64>>,
    /// Pooling weights over history positions.
    beta: Vec<f64>,
}

pub(crate) fn encode_user_cached(
    params: &UserModelParams,
    history: &[Vec<f64>],
) -> (Vec<f64>, UserEncodeCache) {
    let d = params.dims.repr_dim;
    if history.is_empty() {
        return (
            vec![0.0; d],
            UserEncodeCache {
                hist: Vec::new(),
                heads: Vec::new(),
                m: Vec::new(),
                t: Vec::new(),
                beta: Vec::new(),
            },
        );
    }
    let n = history.len();
    let dh = params.dims.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    let mut m = vec![vec![0.0; d]; n];
    let mut head_caches = Vec::with_capacity(params.heads.len());
    for (h_idx, head) in params.heads.iter().enumerate() {
        let q: Vec<Vec<f64>> = history.iter().map(|x| head.query.vecmat(x)).collect();
        let k: Vec<Vec<f64>> = history.iter().map(|x| head.key.vecmat(x)).collect();
        let v: Vec<Vec<f64>> = history.iter().map(|x| head.value.vecmat(x)).collect();
        let mut attn = Vec::with_capacity(n);
        for qi in &q {
            let mut row: Vec<f64> = k.iter().map(|kj| dot(qi, kj) * inv_sqrt).collect();
            softmax_inplace(&mut row);
            attn.push(row);
        }
        for i in 0..n {
            let out = &mut m[i][h_idx * dh..(h_idx + 1) * dh];
            for (j, vj) in v.iter().enumerate() {
                let a = attn[i][j];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += a * vv;
                }
            }
        }
        head_caches.push(HeadCache { q, k, v, attn });
    }

    let t: Vec<Vec<f64>> = m
        .iter()
        .map(|mi| {
            params
                .attn_w
                .vecmat(mi)
                .into_iter()
                .map(f64::tanh)
                .collect()
        })
        .collect();
    let mut beta: Vec<f64> = t.iter().map(|ti| dot(&params.attn_q, ti)).collect();
    softmax_inplace(&mut beta);

    let mut u = vec![0.0; d];
    for (b, mi) in beta.iter().zip(&m) {
        axpy(&mut u, *b, mi);
    }
    (
        u,
        UserEncodeCache {
            hist: history.to_vec(),
            heads: head_caches,
            m,
            t,
            beta,
        },
    )
}

/// Backpropagate `d_user` (gradient wrt the user vector) through the cached
/// forward pass. Returns parameter gradients (same shape as the parameters)
/// and the gradient wrt each history input vector.
pub(crate) fn user_backward(
    params: &UserModelParams,
    cache: &UserEncodeCache,
    d_user: &[f64],
) -> (UserModelParams, Vec<Vec<f64>>) {
    let dims = params.dims;
    let mut grads = UserModelParams::zeros(&dims);
    let n = cache.hist.len();
    if n == 0 {
        return (grads, Vec::new());
    }
    let d = dims.repr_dim;
    let dh = dims.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    // u = sum_i beta_i m_i
    let d_beta: Vec<f64> = cache.m.iter().map(|mi| dot(d_user, mi)).collect();
    let mut d_m: Vec<Vec<f64>> = cache
        .beta
        .iter()
        .map(|&b| d_user.iter().map(|&x| b * x).collect())
        .collect();

    // beta = softmax(s), s_i = attn_q . tanh(m_i @ attn_w)
    let d_s = softmax_backward(&cache.beta, &d_beta);
    for i in 0..n {
        axpy(&mut grads.attn_q, d_s[i], &cache.t[i]);
        let d_pre: Vec<f64> = cache.t[i]
            .iter()
            .zip(&params.attn_q)
            .map(|(&ti, &qa)| d_s[i] * qa * (1.0 - ti * ti))
            .collect();
        grads.attn_w.add_outer(&cache.m[i], &d_pre, 1.0);
        let back = params.attn_w.matvec(&d_pre);
        axpy(&mut d_m[i], 1.0, &back);
    }

    // Self attention, head by head.
    let mut d_hist = vec![vec![0.0; d]; n];
    for (h_idx, (head, hc)) in params.heads.iter().zip(&cache.heads).enumerate() {
        let mut d_q = vec![vec![0.0; dh]; n];
        let mut d_k = vec![vec![0.0; dh]; n];
        let mut d_v = vec![vec![0.0; dh]; n];
        for i in 0..n {
            let d_o = &d_m[i][h_idx * dh..(h_idx + 1) * dh];
            // o_i = sum_j attn_ij v_j
            let d_attn: Vec<f64> = hc.v.iter().map(|vj| dot(d_o, vj)).collect();
            for (j, dv) in d_v.iter_mut().enumerate() {
                axpy(dv, hc.attn[i][j], d_o);
            }
            // attn row i = softmax(z_i), z_ij = (q_i . k_j) / sqrt(dh)
            let d_z = softmax_backward(&hc.attn[i], &d_attn);
            for j in 0..n {
                let s = d_z[j] * inv_sqrt;
                axpy(&mut d_q[i], s, &hc.k[j]);
                axpy(&mut d_k[j], s, &hc.q[i]);
            }
        }
        let g = &mut grads.heads[h_idx];
        for i in 0..n {
            // q_i = hist_i @ query (vecmat), likewise key/value.
            g.query.add_outer(&cache.hist[i], &d_q[i], 1.0);
            g.key.add_outer(&cache.hist[i], &d_k[i], 1.0);
            g.value.add_outer(&cache.hist[i], &d_v[i], 1.0);
            axpy(&mut d_hist[i], 1.0, &head.query.matvec(&d_q[i]));
            axpy(&mut d_hist[i], 1.0, &head.key.matvec(&d_k[i]));
            axpy(&mut d_hist[i], 1.0, &head.value.matvec(&d_v[i]));
        }
    }
    (grads, d_hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::model::{HeadParams, ModelDims};

    fn fill(n: usize, off: usize) -> Vec<f64> {
        (0..n)
            .map(|i| ((((i + off) * 7 + 3) % 11) as f64 - 5.0) / 20.0)
            .collect()
    }

    fn toy_dims() -> ModelDims {
        ModelDims {
            vocab_size: 1,
            token_dim: 1,
            repr_dim: 4,
            heads: 2,
            attn_hidden: 3,
        }
    }

    fn toy_params() -> UserModelParams {
        let dims = toy_dims();
        let (d, dh) = (4, 2);
        let heads = (0..2)
            .map(|k| {
                let base = 11 + k * 17;
                HeadParams {
                    query: Mat::from_vec(d, dh, fill(d * dh, base)),
                    key: Mat::from_vec(d, dh, fill(d * dh, base + 2)),
                    value: Mat::from_vec(d, dh, fill(d * dh, base + 5)),
                }
            })
            .collect();
        UserModelParams {
            dims,
            heads,
            attn_w: Mat::from_vec(4, 3, fill(12, 23)),
            attn_q: fill(3, 29),
        }
    }

    fn identity_like_params(d: usize) -> UserModelParams {
        // One head, value = identity, query/key zero (uniform attention),
        // pooler weights zero (uniform pooling).
        let dims = ModelDims {
            vocab_size: 1,
            token_dim: 1,
            repr_dim: d,
            heads: 1,
            attn_hidden: 2,
        };
        let mut p = UserModelParams::zeros(&dims);
        for i in 0..d {
            p.heads[0].value.row_mut(i)[i] = 1.0;
        }
        p
    }

    #[test]
    fn empty_history_is_zero_vector() {
        assert_eq!(encode_user(&toy_params(), &[]), vec![0.0; 4]);
    }

    #[test]
    fn singleton_history_with_identity_transforms_passes_through() {
        let p = identity_like_params(3);
        let x = vec![0.4, -0.2, 0.7];
        assert_eq!(encode_user(&p, &[x.clone()]), x);
    }

    #[test]
    fn duplicated_history_equals_singleton_with_identity_transforms() {
        let p = identity_like_params(3);
        let x = vec![0.4, -0.2, 0.7];
        let once = encode_user(&p, &[x.clone()]);
        let twice = encode_user(&p, &[x.clone(), x.clone()]);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_item_history_matches_attention_oracle() {
        let hist = vec![fill(4, 1), fill(4, 4), fill(4, 9)];
        let u = encode_user(&toy_params(), &hist);
        let expect = [
            0.024989872339791407,
            0.019250220641395147,
            -0.07413711423011372,
            0.03909821661269837,
        ];
        for (a, b) in u.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn output_is_permutation_invariant() {
        let params = toy_params();
        let hist = vec![fill(4, 1), fill(4, 4), fill(4, 9), fill(4, 13)];
        let base = encode_user(&params, &hist);
        let perms: [[usize; 4]; 3] = [[3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]];
        for perm in perms {
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| hist[i].clone()).collect();
            let out = encode_user(&params, &shuffled);
            for (a, b) in base.iter().zip(&out) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_wrt_inputs() {
        let params = toy_params();
        let hist = vec![fill(4, 1), fill(4, 4), fill(4, 9)];
        // Scalar objective: weighted sum of the user vector.
        let w = fill(4, 6);
        let (u, cache) = encode_user_cached(&params, &hist);
        let _ = u;
        let (_, d_hist) = user_backward(&params, &cache, &w);
        let h = 1e-6;
        for i in 0..hist.len() {
            for c in 0..4 {
                let mut hp = hist.clone();
                let mut hm = hist.clone();
                hp[i][c] += h;
                hm[i][c] -= h;
                let fp = dot(&encode_user(&params, &hp), &w);
                let fm = dot(&encode_user(&params, &hm), &w);
                let num = (fp - fm) / (2.0 * h);
                assert!(
                    (num - d_hist[i][c]).abs() < 1e-7,
                    "input ({i},{c}): {num} vs {}",
                    d_hist[i][c]
                );
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_wrt_params() {
        let params = toy_params();
        let hist = vec![fill(4, 1), fill(4, 4), fill(4, 9)];
        let w = fill(4, 6);
        let (_, cache) = encode_user_cached(&params, &hist);
        let (grads, _) = user_backward(&params, &cache, &w);
        let flat_g = grads.flatten();
        let flat_p = params.flatten();
        let h = 1e-6;
        for i in 0..flat_p.len() {
            let mut pp = flat_p.clone();
            let mut pm = flat_p.clone();
            pp[i] += h;
            pm[i] -= h;
            let fp = dot(
                &encode_user(&UserModelParams::from_flat(&toy_dims(), &pp).unwrap(), &hist),
                &w,
            );
            let fm = dot(
                &encode_user(&UserModelParams::from_flat(&toy_dims(), &pm).unwrap(), &hist),
                &w,
            );
            let num = (fp - fm) / (2.0 * h);
            assert!(
                (num - flat_g[i]).abs() < 1e-7,
                "param {i}: {num} vs {}",
                flat_g[i]
            );
        }
    }
}
