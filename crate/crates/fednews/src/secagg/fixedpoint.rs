//! Fixed-point encoding of real vectors into Z_2^64.
//!
//! Masking arithmetic needs an exact modular domain; reals are scaled by
//! 2^f, rounded, and reduced mod 2^64 with a two's-complement signed
//! interpretation on the way back.

use crate::error::SecAggError;

/// Largest exponent e with |x| < 2^e accepted before quantization, leaving
/// headroom so sums of many client vectors cannot wrap past the sign bit.
const MAG_BITS: u32 = 62;

/// Encode `xs` as fixed-point residues with `frac_bits` fractional bits.
pub fn quantize(xs: &[f64], frac_bits: u32) -> Result<Vec<u64>, SecAggError> {
    let limit_exp = MAG_BITS - frac_bits;
    let limit = (limit_exp as f64).exp2();
    let scale = (frac_bits as f64).exp2();
    xs.iter()
        .enumerate()
        .map(|(index, &x)| {
            if !x.is_finite() || x.abs() >= limit {
                return Err(SecAggError::QuantizeOverflow {
                    index,
                    limit: limit_exp,
                });
            }
            Ok(((x * scale).round() as i64) as u64)
        })
        .collect()
}

/// Decode residues back to reals via the signed interpretation.
pub fn dequantize(qs: &[u64], frac_bits: u32) -> Vec<f64> {
    let inv = (-(frac_bits as f64)).exp2();
    qs.iter().map(|&q| (q as i64) as f64 * inv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_roundtrips_exactly() {
        let q = quantize(&[0.0], 24).unwrap();
        assert_eq!(q, vec![0]);
        assert_eq!(dequantize(&q, 24), vec![0.0]);
    }

    #[test]
    fn known_values_at_f16() {
        assert_eq!(quantize(&[1.5], 16).unwrap(), vec![98304]);
        // -1.0 wraps to 2^64 - 2^16 and decodes back exactly.
        let q = quantize(&[-1.0], 16).unwrap();
        assert_eq!(q, vec![u64::MAX - 65536 + 1]);
        assert_eq!(dequantize(&q, 16), vec![-1.0]);
    }

    #[test]
    fn overflow_is_rejected_before_send() {
        let limit = ((62 - 24) as f64).exp2();
        assert!(matches!(
            quantize(&[limit], 24),
            Err(SecAggError::QuantizeOverflow { index: 0, .. })
        ));
        assert!(quantize(&[limit / 2.0], 24).is_ok());
        assert!(quantize(&[f64::NAN], 24).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_error_is_below_half_ulp(x in -1.0e6f64..1.0e6, f in 8u32..40) {
            let q = quantize(&[x], f).unwrap();
            let back = dequantize(&q, f)[0];
            let tol = (-(f as f64 + 1.0)).exp2();
            prop_assert!((back - x).abs() <= tol);
        }

        #[test]
        fn modular_sums_decode_to_real_sums(
            xs in proptest::collection::vec(-100.0f64..100.0, 1..20)
        ) {
            let f = 24;
            let quantized: Vec<Vec<u64>> =
                xs.iter().map(|&x| quantize(&[x], f).unwrap()).collect();
            let sum_q = quantized.iter().fold(0u64, |acc, q| acc.wrapping_add(q[0]));
            let back = dequantize(&[sum_q], f)[0];
            let true_sum: f64 = xs.iter().sum();
            let tol = xs.len() as f64 * (-(f as f64 + 1.0)).exp2();
            prop_assert!((back - true_sum).abs() <= tol);
        }
    }
}
