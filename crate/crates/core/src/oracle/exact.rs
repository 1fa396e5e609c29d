//! Exact dyadic arithmetic over decoded words, kept independent of the
//! datapath's codec.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::codec::{Format, PrecisionSpec, Rounding};

/// `num * 2^exp`, exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exact {
    pub num: BigInt,
    pub exp: i32,
}

impl Exact {
    pub fn zero() -> Exact {
        Exact {
            num: BigInt::zero(),
            exp: 0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.num.is_negative()
    }

    pub fn add(&self, other: &Exact) -> Exact {
        let exp = self.exp.min(other.exp);
        let a = &self.num << (self.exp - exp) as usize;
        let b = &other.num << (other.exp - exp) as usize;
        Exact { num: a + b, exp }
    }

    pub fn mul(&self, other: &Exact) -> Exact {
        Exact {
            num: &self.num * &other.num,
            exp: self.exp + other.exp,
        }
    }

    pub fn to_rational(&self) -> BigRational {
        let two = BigInt::from(2);
        if self.exp >= 0 {
            BigRational::from_integer(&self.num * two.pow(self.exp as u32))
        } else {
            BigRational::new(self.num.clone(), two.pow((-self.exp) as u32))
        }
    }

    pub fn to_f64(&self) -> f64 {
        if self.num.is_zero() {
            return 0.0;
        }
        // Keep 64 significant bits before scaling so huge numerators do not
        // overflow the conversion.
        let bits = self.num.bits() as i32;
        let drop = (bits - 64).max(0);
        let head = (&self.num >> drop as usize).to_f64().unwrap_or(f64::NAN);
        head * 2f64.powi(self.exp + drop)
    }

    /// Rounds to a word of `spec`; overflow saturates to infinity and
    /// results below the normal range flush to signed zero.
    pub fn to_word(&self, rounding: Rounding, spec: &PrecisionSpec) -> u16 {
        let word_bits = 1 + spec.exp_bits + spec.frac_bits;
        let sign: u16 = if self.is_negative() {
            1 << (word_bits - 1)
        } else {
            0
        };
        if self.is_zero() {
            return 0;
        }
        let mag = self.num.abs();
        let lead = mag.bits() as i64 - 1;
        let fb = spec.frac_bits as i64;
        let keep_shift = lead - fb;
        let mut sig = if keep_shift >= 0 {
            &mag >> keep_shift as usize
        } else {
            &mag << (-keep_shift) as usize
        };
        let mut unbiased = self.exp as i64 + lead;
        if rounding == Rounding::RoundNearestEven && keep_shift > 0 {
            let rem = &mag - (&sig << keep_shift as usize);
            let half = BigInt::one() << (keep_shift - 1) as usize;
            let odd = (&sig % 2u32) == BigInt::one();
            if rem > half || (rem == half && odd) {
                sig += 1u32;
                if sig.bits() as i64 > fb + 1 {
                    sig >>= 1usize;
                    unbiased += 1;
                }
            }
        }
        let all_ones = (1i64 << spec.exp_bits) - 1;
        let biased = unbiased + spec.bias as i64;
        if biased >= all_ones {
            return sign | ((all_ones as u16) << spec.frac_bits);
        }
        if biased <= 0 {
            return sign;
        }
        let frac = (sig - (BigInt::one() << fb as usize))
            .to_u16()
            .expect("fraction fits");
        sign | ((biased as u16) << spec.frac_bits) | frac
    }
}

/// Real value of a finite word as an exact dyadic; `None` for Inf/NaN.
/// Subnormal words keep their IEEE value.
pub fn word_value(word: u16, spec: &PrecisionSpec) -> Option<Exact> {
    match spec.format {
        Format::Int8 => Some(Exact {
            num: BigInt::from(word as u8 as i8),
            exp: 0,
        }),
        Format::Bf16 => {
            let f = f32::from_bits(u32::from(word) << 16);
            if !f.is_finite() {
                return None;
            }
            Some(exact_from_f64(f64::from(f)))
        }
        Format::Fp8E4M3 => {
            let w = word & 0xFF;
            let neg = w & 0x80 != 0;
            let e = i32::from((w >> 3) & 0xF);
            let m = i64::from(w & 0x7);
            if e == 15 {
                return None;
            }
            let (sig, exp) = if e == 0 {
                (m, -6 - 3)
            } else {
                (8 + m, e - 7 - 3)
            };
            Some(Exact {
                num: BigInt::from(if neg { -sig } else { sig }),
                exp,
            })
        }
    }
}

fn exact_from_f64(x: f64) -> Exact {
    if x == 0.0 {
        return Exact::zero();
    }
    let bits = x.to_bits();
    let neg = bits >> 63 == 1;
    let e = ((bits >> 52) & 0x7FF) as i32;
    let frac = (bits & ((1 << 52) - 1)) as i64;
    let (sig, exp) = if e == 0 {
        (frac, -1074)
    } else {
        (frac | (1 << 52), e - 1075)
    };
    Exact {
        num: BigInt::from(if neg { -sig } else { sig }),
        exp,
    }
}

/// Exact dot product of two finite word vectors. Panics on length mismatch
/// or non-finite operands.
pub fn exact_dot(inputs: &[u16], weights: &[u16], spec: &PrecisionSpec) -> Exact {
    assert_eq!(
        inputs.len(),
        weights.len(),
        "dot product operands differ in length"
    );
    inputs
        .iter()
        .zip(weights)
        .fold(Exact::zero(), |acc, (&a, &w)| {
            let a = word_value(a, spec).expect("finite input");
            let w = word_value(w, spec).expect("finite weight");
            acc.add(&a.mul(&w))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BF: PrecisionSpec = PrecisionSpec::BF16;

    #[test]
    fn exact_dot_examples() {
        let mut x = vec![0u16; 8];
        x[3] = 0x3F80;
        let w: Vec<u16> = (0..8).map(|i| 0x4000 + i as u16).collect();
        assert_eq!(
            exact_dot(&x, &w, &BF).to_f64(),
            f64::from(f32::from_bits(0x4003 << 16))
        );
        assert!(exact_dot(&[0; 8], &w, &BF).is_zero());
        assert_eq!(
            exact_dot(&[0x3F80, 0x3F80], &[0x3F80, 0x3F80], &BF).to_f64(),
            2.0
        );
    }

    #[test]
    fn rounding_to_words() {
        let e = |num: i64, exp: i32| Exact {
            num: BigInt::from(num),
            exp,
        };
        assert_eq!(e(1, 0).to_word(Rounding::Truncate, &BF), 0x3F80);
        assert_eq!(e(-3, 0).to_word(Rounding::Truncate, &BF), 0xC040);
        assert_eq!(e(0x181, -8).to_word(Rounding::Truncate, &BF), 0x3FC0);
        assert_eq!(
            e(0x181, -8).to_word(Rounding::RoundNearestEven, &BF),
            0x3FC0
        );
        assert_eq!(
            e(0x183, -8).to_word(Rounding::RoundNearestEven, &BF),
            0x3FC2
        );
        assert_eq!(
            e(0x1FF, -8).to_word(Rounding::RoundNearestEven, &BF),
            0x4000
        );
        assert_eq!(e(1, 200).to_word(Rounding::Truncate, &BF), 0x7F80);
        assert_eq!(e(-1, -200).to_word(Rounding::Truncate, &BF), 0x8000);
    }

    #[test]
    fn fp8_values() {
        let f = PrecisionSpec::FP8_E4M3;
        assert_eq!(word_value(0x38, &f).unwrap().to_f64(), 1.0);
        assert_eq!(word_value(0xC0, &f).unwrap().to_f64(), -2.0);
        assert!(word_value(0x78, &f).is_none());
        assert_eq!(word_value(0x77, &f).unwrap().to_f64(), 240.0);
    }
}
