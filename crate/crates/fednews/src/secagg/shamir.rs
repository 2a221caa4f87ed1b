//! Shamir secret sharing over GF(2^128).
//!
//! Secrets are processed in 16-byte blocks, each a single field element, so
//! a 16-byte PRG seed is exactly one block and a 32-byte key is two. The
//! field uses the x^128 + x^7 + x^2 + x + 1 reduction polynomial.

use rand::{Rng, RngExt};

use crate::error::SecAggError;

const BLOCK: usize = 16;

/// Carry-less multiplication reduced modulo x^128 + x^7 + x^2 + x + 1.
fn gf_mul(mut a: u128, mut b: u128) -> u128 {
    let mut r = 0u128;
    while b != 0 {
        if b & 1 == 1 {
            r ^= a;
        }
        let carry = a >> 127;
        a <<= 1;
        if carry != 0 {
            a ^= 0x87;
        }
        b >>= 1;
    }
    r
}

/// Inverse by exponentiation: a^(2^128 - 2).
fn gf_inv(a: u128) -> u128 {
    assert_ne!(a, 0, "zero has no inverse");
    // 2^128 - 2 = 0xfffe...: square-and-multiply over the fixed exponent.
    let mut result = 1u128;
    let mut base = a;
    let exp: [u64; 2] = [u64::MAX - 1, u64::MAX]; // little-endian limbs
    for (limb_idx, &limb) in exp.iter().enumerate() {
        for bit in 0..64 {
            if (limb >> bit) & 1 == 1 {
                result = gf_mul(result, base);
            }
            if limb_idx < exp.len() - 1 || bit < 63 {
                base = gf_mul(base, base);
            }
        }
    }
    result
}

/// One holder's share: the evaluation point and one 16-byte block per
/// secret block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    /// Evaluation point x >= 1.
    pub index: u64,
    pub payload: Vec<u8>,
}

fn blocks_of(secret: &[u8]) -> Vec<u128> {
    secret
        .chunks(BLOCK)
        .map(|c| {
            let mut buf = [0u8; BLOCK];
            buf[..c.len()].copy_from_slice(c);
            u128::from_le_bytes(buf)
        })
        .collect()
}

/// Split `secret` into `n` shares, any `threshold` of which reconstruct it.
pub fn split(
    secret: &[u8],
    threshold: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Share>, SecAggError> {
    if threshold == 0 || threshold > n {
        return Err(SecAggError::BadConfig(format!(
            "threshold {threshold} not in 1..={n}"
        )));
    }
    let blocks = blocks_of(secret);
    // One random polynomial per block: coeffs[0] is the secret block.
    let polys: Vec<Vec<u128>> = blocks
        .iter()
        .map(|&b| {
            let mut coeffs = vec![b];
            for _ in 1..threshold {
                coeffs.push(rng.random::<u128>());
            }
            coeffs
        })
        .collect();
    Ok((1..=n as u64)
        .map(|x| {
            let xf = x as u128;
            let mut payload = Vec::with_capacity(blocks.len() * BLOCK);
            for coeffs in &polys {
                // Horner evaluation at x.
                let mut y = 0u128;
                for &c in coeffs.iter().rev() {
                    y = gf_mul(y, xf) ^ c;
                }
                payload.extend_from_slice(&y.to_le_bytes());
            }
            Share { index: x, payload }
        })
        .collect())
}

/// Reconstruct a `secret_len`-byte secret from at least `threshold` shares.
pub fn reconstruct(
    shares: &[Share],
    threshold: usize,
    secret_len: usize,
) -> Result<Vec<u8>, SecAggError> {
    let mut seen = std::collections::BTreeMap::new();
    for s in shares {
        seen.entry(s.index).or_insert(s);
    }
    if seen.len() < threshold {
        return Err(SecAggError::ThresholdNotMet {
            needed: threshold,
            got: seen.len(),
        });
    }
    let chosen: Vec<&Share> = seen.values().take(threshold).cloned().collect();
    let n_blocks = secret_len.div_ceil(BLOCK);
    for s in &chosen {
        if s.payload.len() < n_blocks * BLOCK {
            return Err(SecAggError::Protocol(format!(
                "share payload too short: {} < {}",
                s.payload.len(),
                n_blocks * BLOCK
            )));
        }
    }

    // Lagrange basis at 0; note subtraction is XOR in GF(2^128).
    let xs: Vec<u128> = chosen.iter().map(|s| s.index as u128).collect();
    let lambdas: Vec<u128> = (0..xs.len())
        .map(|i| {
            let mut num = 1u128;
            let mut den = 1u128;
            for j in 0..xs.len() {
                if i == j {
                    continue;
                }
                num = gf_mul(num, xs[j]);
                den = gf_mul(den, xs[i] ^ xs[j]);
            }
            gf_mul(num, gf_inv(den))
        })
        .collect();

    let mut secret = Vec::with_capacity(secret_len);
    for b in 0..n_blocks {
        let mut acc = 0u128;
        for (share, &lambda) in chosen.iter().zip(&lambdas) {
            let mut buf = [0u8; BLOCK];
            buf.copy_from_slice(&share.payload[b * BLOCK..(b + 1) * BLOCK]);
            acc ^= gf_mul(lambda, u128::from_le_bytes(buf));
        }
        secret.extend_from_slice(&acc.to_le_bytes());
    }
    secret.truncate(secret_len);
    Ok(secret)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn field_axioms_spot_checks() {
        let a = 0x0123_4567_89ab_cdef_1122_3344_5566_7788u128;
        let b = 0xdead_beef_cafe_f00d_9876_5432_10fe_dcbau128;
        assert_eq!(gf_mul(a, 1), a);
        assert_eq!(gf_mul(a, b), gf_mul(b, a));
        assert_eq!(gf_mul(a, gf_inv(a)), 1);
        assert_eq!(gf_mul(gf_mul(a, b), gf_inv(b)), a);
    }

    #[test]
    fn degree_zero_polynomial_shares_are_the_secret() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let secret = [7u8; 16];
        let shares = split(&secret, 1, 3, &mut rng).unwrap();
        for s in shares {
            assert_eq!(s.payload, secret);
        }
    }

    #[test]
    fn two_of_three_reconstructs() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let secret = b"sixteen byte key".to_vec();
        let shares = split(&secret, 2, 3, &mut rng).unwrap();
        for skip in 0..3 {
            let subset: Vec<Share> = shares
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, s)| s.clone())
                .collect();
            assert_eq!(reconstruct(&subset, 2, 16).unwrap(), secret);
        }
        assert!(matches!(
            reconstruct(&shares[..1], 2, 16),
            Err(SecAggError::ThresholdNotMet { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn random_25_of_50_subsets_reconstruct_a_16_byte_seed() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut secret = [0u8; 16];
        rng.fill(&mut secret[..]);
        let shares = split(&secret, 25, 50, &mut rng).unwrap();
        for _ in 0..100 {
            let pick = rand::seq::index::sample(&mut rng, 50, 25);
            let subset: Vec<Share> = pick.iter().map(|i| shares[i].clone()).collect();
            assert_eq!(reconstruct(&subset, 25, 16).unwrap(), secret.to_vec());
        }
    }

    #[test]
    fn duplicate_indices_do_not_fake_the_threshold() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let shares = split(b"0123456789abcdef", 3, 5, &mut rng).unwrap();
        let dup = vec![shares[0].clone(), shares[0].clone(), shares[1].clone()];
        assert!(matches!(
            reconstruct(&dup, 3, 16),
            Err(SecAggError::ThresholdNotMet { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn any_threshold_subset_reconstructs(
            seed in any::<u64>(),
            t in 1usize..6,
            extra in 0usize..5,
            len in 1usize..40
        ) {
            let n = t + extra;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut secret = vec![0u8; len];
            rng.fill(&mut secret[..]);
            let shares = split(&secret, t, n, &mut rng).unwrap();
            let pick = rand::seq::index::sample(&mut rng, n, t);
            let subset: Vec<Share> = pick.iter().map(|i| shares[i].clone()).collect();
            prop_assert_eq!(reconstruct(&subset, t, len).unwrap(), secret);
        }
    }
}
