//! Group maximum exponents, saturating offsets and mantissa alignment shifts.

use crate::codec::{PrecisionSpec, SignedMantissa};
use crate::error::{Error, Result};

/// Offsets are 4-bit quantities.
pub const OFFSET_BITS: u32 = 4;
pub const MAX_OFFSET: u32 = (1 << OFFSET_BITS) - 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentGroup {
    pub exponents: Vec<u32>,
    pub max_exponent: u32,
    pub offsets: Vec<u32>,
}

/// Distance from `exp` up to `max`, clamped into the 4-bit offset range.
/// A corrupted maximum below `exp` yields 0.
pub fn saturating_offset(max: u32, exp: u32) -> u32 {
    max.saturating_sub(exp).min(MAX_OFFSET)
}

pub fn build_group(exponents: &[u32], group_size: usize) -> Result<AlignmentGroup> {
    if exponents.len() != group_size || group_size == 0 {
        return Err(Error::Config(format!(
            "alignment group holds {} exponents, expected {group_size}",
            exponents.len()
        )));
    }
    let max_exponent = exponents.iter().copied().max().unwrap_or(0);
    Ok(AlignmentGroup {
        exponents: exponents.to_vec(),
        max_exponent,
        offsets: exponents
            .iter()
            .map(|&e| saturating_offset(max_exponent, e))
            .collect(),
    })
}

/// Arithmetic right shift, i.e. floor division by `2^offset`.
pub fn shift_align(m: SignedMantissa, offset: u32) -> SignedMantissa {
    debug_assert!(offset <= MAX_OFFSET);
    SignedMantissa(m.0 >> offset)
}

/// Exponent shared by a group of products or partial sums, stored re-biased
/// in the exponent width of the format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct GroupExponent(pub u32);

impl GroupExponent {
    /// `clamp(input_exp + weight_exp - bias, 0, 2^exp_bits - 1)`.
    pub fn from_pair(input_exp: u32, weight_exp: u32, spec: &PrecisionSpec) -> GroupExponent {
        let raw = input_exp as i64 + weight_exp as i64 - spec.bias as i64;
        GroupExponent(raw.clamp(0, spec.exp_all_ones() as i64) as u32)
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

pub fn column_exponent(group_exps: &[GroupExponent]) -> GroupExponent {
    group_exps.iter().copied().max().unwrap_or_default()
}

pub fn global_offsets(group_exps: &[GroupExponent], column: GroupExponent) -> Vec<u32> {
    group_exps
        .iter()
        .map(|g| saturating_offset(column.0, g.0))
        .collect()
}

/// Re-aligns group partial sums to the column maximum exponent.
pub fn global_align(group_sums: &[i64], group_exps: &[GroupExponent]) -> (Vec<i64>, GroupExponent) {
    assert_eq!(group_sums.len(), group_exps.len());
    let column = column_exponent(group_exps);
    let aligned = group_sums
        .iter()
        .zip(global_offsets(group_exps, column))
        .map(|(&s, off)| s >> off)
        .collect();
    (aligned, column)
}

/// Aligns consecutive groups of `group` products to their largest product
/// exponent. Returns the shifted products and one exponent per group.
pub fn local_align_products(
    products: &[i64],
    product_exps: &[GroupExponent],
    group: usize,
) -> (Vec<i64>, Vec<GroupExponent>) {
    assert_eq!(products.len(), product_exps.len());
    assert!(group > 0 && products.len().is_multiple_of(group));
    let mut aligned = Vec::with_capacity(products.len());
    let mut exps = Vec::with_capacity(products.len() / group);
    for (ps, es) in products.chunks(group).zip(product_exps.chunks(group)) {
        let max = column_exponent(es);
        aligned.extend(
            ps.iter()
                .zip(es)
                .map(|(&p, e)| p >> saturating_offset(max.0, e.0)),
        );
        exps.push(max);
    }
    (aligned, exps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_group_examples() {
        let mut e = vec![130, 127, 125];
        e.extend(std::iter::repeat_n(125, 13));
        let g = build_group(&e, 16).unwrap();
        assert_eq!(g.max_exponent, 130);
        assert_eq!(&g.offsets[..4], &[0, 3, 5, 5]);

        let g = build_group(&[127; 16], 16).unwrap();
        assert!(g.offsets.iter().all(|&o| o == 0));

        let g = build_group(&[140, 120], 2).unwrap();
        assert_eq!(g.offsets, vec![0, 15]);

        assert!(matches!(build_group(&[1, 2, 3], 16), Err(Error::Config(_))));
    }

    #[test]
    fn shift_align_examples() {
        assert_eq!(shift_align(SignedMantissa(-2048), 3).0, -256);
        assert_eq!(shift_align(SignedMantissa(2048), 15).0, 0);
        assert_eq!(shift_align(SignedMantissa(-1), 5).0, -1);
    }

    #[test]
    fn global_align_examples() {
        let e = [GroupExponent(127); 4];
        let (s, c) = global_align(&[5, -7, 9, 11], &e);
        assert_eq!(s, vec![5, -7, 9, 11]);
        assert_eq!(c, GroupExponent(127));

        let t = 12345;
        let (s, c) = global_align(&[999, 8 * t], &[GroupExponent(130), GroupExponent(127)]);
        assert_eq!(s, vec![999, t]);
        assert_eq!(c, GroupExponent(130));

        let (s, _) = global_align(&[0, 1 << 20], &[GroupExponent(150), GroupExponent(130)]);
        assert_eq!(s[1], 1 << 5);
    }

    #[test]
    fn local_align_examples() {
        let p = [100, -200, 300, 400];
        let (a, e) = local_align_products(&p, &[GroupExponent(127); 4], 4);
        assert_eq!(a, p.to_vec());
        assert_eq!(e, vec![GroupExponent(127)]);

        let (a, e) = local_align_products(&[64, 64], &[GroupExponent(129), GroupExponent(126)], 2);
        assert_eq!(a, vec![64, 8]);
        assert_eq!(e, vec![GroupExponent(129)]);

        let (a, _) = local_align_products(
            &[1 << 20, 1 << 20],
            &[GroupExponent(147), GroupExponent(130)],
            2,
        );
        assert_eq!(a[1], 1 << 5);
    }

    #[test]
    fn group_exponent_clamps() {
        let s = PrecisionSpec::BF16;
        assert_eq!(GroupExponent::from_pair(127, 127, &s).0, 127);
        assert_eq!(GroupExponent::from_pair(10, 20, &s).0, 0);
        assert_eq!(GroupExponent::from_pair(250, 250, &s).0, 255);
    }

    proptest! {
        #[test]
        fn offsets_saturate(exps in proptest::collection::vec(0u32..256, 16)) {
            let g = build_group(&exps, 16).unwrap();
            prop_assert!(g.offsets.iter().all(|&o| o <= MAX_OFFSET));
            let arg = exps.iter().position(|&e| e == g.max_exponent).unwrap();
            prop_assert_eq!(g.offsets[arg], 0);
        }

        #[test]
        fn shift_is_floor_division(m in -4096i64..4096, k in 0u32..=15) {
            let exact = num_rational::Ratio::new(m, 1i64 << k).floor().to_integer();
            prop_assert_eq!(shift_align(SignedMantissa(m), k).0, exact);
        }

        #[test]
        fn shift_commutes_with_sign_on_multiples(q in -256i64..256, k in 0u32..=4) {
            let m = q << k;
            prop_assert_eq!(shift_align(SignedMantissa(-m), k).0, -shift_align(SignedMantissa(m), k).0);
        }

        #[test]
        fn equal_exponents_leave_values_unshifted(e in 1u32..255, ms in proptest::collection::vec(-4096i64..4096, 8)) {
            let g = build_group(&[e; 8], 8).unwrap();
            for (m, off) in ms.iter().zip(&g.offsets) {
                prop_assert_eq!(shift_align(SignedMantissa(*m), *off).0, *m);
            }
        }
    }
}
