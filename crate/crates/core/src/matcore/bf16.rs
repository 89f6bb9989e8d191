//! Brain-float (bfloat16) conversion.
//!
//! A bfloat16 is the upper half of an IEEE-754 binary32 word: 1 sign bit,
//! 8 exponent bits and 7 mantissa bits. It is used here purely as a storage
//! format; arithmetic always promotes back to `f32` first.

/// Rounds an `f32` to the nearest bfloat16 (ties to even) and returns its bit
/// pattern.
///
/// NaN inputs keep their sign and the upper payload bits and are forced quiet.
pub fn bf16_round(x: f32) -> u16 {
    let bits = x.to_bits();
    if x.is_nan() {
        return ((bits >> 16) as u16) | 0x0040;
    }
    let lsb = (bits >> 16) & 1;
    (bits.wrapping_add(0x7FFF + lsb) >> 16) as u16
}

/// Exact promotion of a bfloat16 bit pattern to `f32`.
#[inline]
pub fn bf16_to_f32(bits: u16) -> f32 {
    f32::from_bits((bits as u32) << 16)
}

/// Rounds `x` through bfloat16 and back, i.e. the value a BF16 buffer holds
/// after storing `x`.
#[inline]
pub fn bf16_quantize(x: f32) -> f32 {
    bf16_to_f32(bf16_round(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_values() {
        assert_eq!(bf16_round(1.0), 0x3F80);
        assert_eq!(bf16_round(0.0), 0x0000);
        assert_eq!(bf16_round(-0.0), 0x8000);
        assert_eq!(bf16_round(-2.0), 0xC000);
        assert_eq!(bf16_round(f32::INFINITY), 0x7F80);
        assert_eq!(bf16_round(f32::NEG_INFINITY), 0xFF80);
    }

    #[test]
    fn ties_go_to_even() {
        // 1 + 2^-8 sits exactly between 1.0 (even) and 1 + 2^-7 (odd).
        assert_eq!(bf16_round(1.0 + 2f32.powi(-8)), 0x3F80);
        // 1 + 3 * 2^-8 sits between 1 + 2^-7 (odd) and 1 + 2^-6 (even).
        assert_eq!(bf16_round(1.0 + 3.0 * 2f32.powi(-8)), 0x3F82);
    }

    #[test]
    fn overflow_rounds_to_infinity() {
        assert_eq!(bf16_round(f32::MAX), 0x7F80);
    }

    #[test]
    fn nan_stays_quiet_nan_with_payload() {
        let signalling = f32::from_bits(0x7F81_0000);
        let out = bf16_round(signalling);
        assert!(bf16_to_f32(out).is_nan());
        assert_eq!(out, 0x7FC1);
        let negative = f32::from_bits(0xFFC0_1234);
        assert_eq!(bf16_round(negative), 0xFFC0);
    }

    #[test]
    fn rounding_is_idempotent() {
        for &x in &[0.1f32, -3.7, 1e-20, 6.5e10, 123.456] {
            let once = bf16_quantize(x);
            assert_eq!(bf16_quantize(once).to_bits(), once.to_bits());
        }
    }
}
