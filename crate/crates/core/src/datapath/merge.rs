use num_bigint::{BigInt, Sign};
use num_traits::Zero;

use crate::codec::{decode, pack_rounded, FpClass, PrecisionSpec, Rounding};

/// Sums per-tile output words exactly, in the given order, and rounds once.
/// Subnormal partials flush to zero; infinities and NaNs follow IEEE rules.
pub fn merge_words(words: &[u16], rounding: Rounding, spec: &PrecisionSpec) -> u16 {
    let (mut nan, mut pos_inf, mut neg_inf) = (false, false, false);
    let mut terms = Vec::with_capacity(words.len());
    for &w in words {
        let c = decode(w, spec);
        match c.class {
            FpClass::NaN => nan = true,
            FpClass::Inf if c.sign => neg_inf = true,
            FpClass::Inf => pos_inf = true,
            FpClass::Normal => {
                let sig = (1u64 << spec.frac_bits) | u64::from(c.fraction);
                let exp = c.exponent as i32 - spec.bias - spec.frac_bits as i32;
                terms.push((c.sign, sig, exp));
            }
            FpClass::Zero | FpClass::Subnormal => {}
        }
    }
    if nan || (pos_inf && neg_inf) {
        return spec.canonical_nan();
    }
    if pos_inf || neg_inf {
        return spec.infinity(neg_inf);
    }
    let Some(min_exp) = terms.iter().map(|t| t.2).min() else {
        return 0;
    };
    let mut acc = BigInt::zero();
    for (sign, sig, exp) in terms {
        let v = BigInt::from(sig) << (exp - min_exp) as usize;
        if sign {
            acc -= v;
        } else {
            acc += v;
        }
    }
    if acc.is_zero() {
        return 0;
    }
    let negative = acc.sign() == Sign::Minus;
    let mag = acc.magnitude();
    let p = mag.bits() - 1;
    let fb = u64::from(spec.frac_bits);
    let (top, guard, sticky) = if p >= fb {
        let drop = p - fb;
        let top = (mag >> drop).to_u64_digits().first().copied().unwrap_or(0);
        let guard = drop > 0 && mag.bit(drop - 1);
        let sticky = drop > 1 && mag.trailing_zeros().is_some_and(|tz| tz < drop - 1);
        (top, guard, sticky)
    } else {
        let top = (mag << (fb - p))
            .to_u64_digits()
            .first()
            .copied()
            .unwrap_or(0);
        (top, false, false)
    };
    pack_rounded(
        negative,
        min_exp + p as i32,
        top,
        guard,
        sticky,
        rounding,
        spec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const BF: PrecisionSpec = PrecisionSpec::BF16;

    #[test]
    fn exact_then_single_rounding() {
        assert_eq!(
            merge_words(&[0x3F80, 0x3F80], Rounding::Truncate, &BF),
            0x4000
        );
        assert_eq!(
            merge_words(&[0x3F80, 0xBF80], Rounding::Truncate, &BF),
            0x0000
        );
        assert_eq!(merge_words(&[], Rounding::Truncate, &BF), 0x0000);
        // 1.0 + 2^-8 + 2^-8 = 1 + 2^-7 exactly, though each addend alone would be lost.
        assert_eq!(
            merge_words(&[0x3F80, 0x3B80, 0x3B80], Rounding::Truncate, &BF),
            0x3F81
        );
        // 1.0 + 2^-8 is a tie: truncation and RNE both keep the even 1.0.
        assert_eq!(
            merge_words(&[0x3F80, 0x3B80], Rounding::RoundNearestEven, &BF),
            0x3F80
        );
        // 1 + 2^-7 + 2^-8 ties to the even fraction above.
        assert_eq!(
            merge_words(&[0x3F81, 0x3B80], Rounding::RoundNearestEven, &BF),
            0x3F82
        );
        assert_eq!(
            merge_words(&[0x3F81, 0x3B80], Rounding::Truncate, &BF),
            0x3F81
        );
    }

    #[test]
    fn non_finite_partials() {
        assert_eq!(
            merge_words(&[0x7F80, 0x3F80], Rounding::Truncate, &BF),
            0x7F80
        );
        assert_eq!(
            merge_words(&[0x7F80, 0xFF80], Rounding::Truncate, &BF),
            BF.canonical_nan()
        );
        assert_eq!(
            merge_words(&[0x7FC1, 0x3F80], Rounding::Truncate, &BF),
            BF.canonical_nan()
        );
        assert_eq!(
            merge_words(&[0x7F7F, 0x7F7F], Rounding::Truncate, &BF),
            0x7F80
        );
    }

    #[test]
    fn wide_exponent_span() {
        // 2^127 + 2^-126 truncates back to 2^127.
        assert_eq!(
            merge_words(&[0x7F00, 0x0080], Rounding::Truncate, &BF),
            0x7F00
        );
        assert_eq!(
            merge_words(&[0x0080, 0x0080], Rounding::Truncate, &BF),
            0x0100
        );
    }
}
