//! Floating-point word codec and the fixed-point mantissa forms that enter the
//! crossbar.
//!
//! Words of every format travel as `u16`; 8-bit formats occupy the low byte.
//! Subnormal operands are flushed to zero when they are turned into mantissas,
//! and `encode` saturates to infinity on overflow and flushes on underflow.

use std::fmt;

use crate::error::{Error, Result};

/// Number formats supported by the datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Bf16,
    Fp8E4M3,
    Int8,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Bf16 => "bf16",
            Format::Fp8E4M3 => "fp8",
            Format::Int8 => "int8",
        })
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bf16" | "bfloat16" => Ok(Format::Bf16),
            "fp8" | "fp8_e4m3" | "fp8-e4m3" | "e4m3" => Ok(Format::Fp8E4M3),
            "int8" => Ok(Format::Int8),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

/// Bit geometry of one number format as it flows through the crossbar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrecisionSpec {
    pub format: Format,
    pub exp_bits: u32,
    pub frac_bits: u32,
    pub bias: i32,
    /// Mantissa width after the hidden one is prepended and zeros appended.
    pub padded_width: u32,
    /// Two's-complement operand width stored in a memory cell.
    pub operand_width: u32,
    pub product_width: u32,
}

impl PrecisionSpec {
    pub const BF16: PrecisionSpec = PrecisionSpec {
        format: Format::Bf16,
        exp_bits: 8,
        frac_bits: 7,
        bias: 127,
        padded_width: 12,
        operand_width: 13,
        product_width: 26,
    };

    pub const FP8_E4M3: PrecisionSpec = PrecisionSpec {
        format: Format::Fp8E4M3,
        exp_bits: 4,
        frac_bits: 3,
        bias: 7,
        padded_width: 8,
        operand_width: 9,
        product_width: 18,
    };

    pub const INT8: PrecisionSpec = PrecisionSpec {
        format: Format::Int8,
        exp_bits: 0,
        frac_bits: 0,
        bias: 0,
        padded_width: 0,
        operand_width: 8,
        product_width: 16,
    };

    pub fn of(format: Format) -> PrecisionSpec {
        match format {
            Format::Bf16 => Self::BF16,
            Format::Fp8E4M3 => Self::FP8_E4M3,
            Format::Int8 => Self::INT8,
        }
    }

    pub fn is_float(&self) -> bool {
        self.format != Format::Int8
    }

    /// Width of an encoded word.
    pub fn word_bits(&self) -> u32 {
        match self.format {
            Format::Int8 => 8,
            _ => 1 + self.exp_bits + self.frac_bits,
        }
    }

    pub fn exp_all_ones(&self) -> u32 {
        (1 << self.exp_bits) - 1
    }

    /// Zeros appended below the fraction when padding.
    pub fn pad_shift(&self) -> u32 {
        self.padded_width - self.frac_bits - 1
    }

    pub fn canonical_nan(&self) -> u16 {
        let e = self.exp_all_ones() as u16;
        (e << self.frac_bits) | (1 << (self.frac_bits - 1))
    }

    pub fn infinity(&self, negative: bool) -> u16 {
        let e = (self.exp_all_ones() as u16) << self.frac_bits;
        if negative {
            e | self.sign_mask()
        } else {
            e
        }
    }

    pub fn sign_mask(&self) -> u16 {
        1 << (self.word_bits() - 1)
    }
}

/// Rounding applied when a wide significand is packed into a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rounding {
    #[default]
    Truncate,
    RoundNearestEven,
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "truncate" | "trunc" | "rtz" => Ok(Rounding::Truncate),
            "rne" | "nearest-even" | "round-nearest-even" | "nearest" => {
                Ok(Rounding::RoundNearestEven)
            }
            other => Err(Error::Config(format!("unknown rounding mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FpClass {
    Normal,
    Zero,
    Subnormal,
    Inf,
    NaN,
}

impl FpClass {
    pub fn is_finite(self) -> bool {
        !matches!(self, FpClass::Inf | FpClass::NaN)
    }
}

/// A floating-point word split into its bit fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FpComponents {
    pub sign: bool,
    /// Biased exponent field.
    pub exponent: u32,
    pub fraction: u32,
    pub class: FpClass,
}

/// Two's-complement mantissa held to `operand_width` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SignedMantissa(pub i64);

impl SignedMantissa {
    pub fn value(self) -> i64 {
        self.0
    }
}

pub fn decode(word: u16, spec: &PrecisionSpec) -> FpComponents {
    debug_assert!(spec.is_float());
    let frac_mask = (1u32 << spec.frac_bits) - 1;
    let w = u32::from(word);
    let fraction = w & frac_mask;
    let exponent = (w >> spec.frac_bits) & spec.exp_all_ones();
    let sign = (w >> (spec.exp_bits + spec.frac_bits)) & 1 == 1;
    let class = match (exponent, fraction) {
        (0, 0) => FpClass::Zero,
        (0, _) => FpClass::Subnormal,
        (e, 0) if e == spec.exp_all_ones() => FpClass::Inf,
        (e, _) if e == spec.exp_all_ones() => FpClass::NaN,
        _ => FpClass::Normal,
    };
    FpComponents {
        sign,
        exponent,
        fraction,
        class,
    }
}

/// Hidden one prepended, zeros appended; zero and subnormal flush to 0.
pub fn padded_mantissa(c: &FpComponents, spec: &PrecisionSpec) -> Result<u32> {
    match c.class {
        FpClass::Normal => Ok(((1 << spec.frac_bits) | c.fraction) << spec.pad_shift()),
        FpClass::Zero | FpClass::Subnormal => Ok(0),
        FpClass::Inf | FpClass::NaN => Err(Error::NonFinite(format!(
            "{:?} operand cannot enter the crossbar",
            c.class
        ))),
    }
}

pub fn to_signed(mag: u32, sign: bool, spec: &PrecisionSpec) -> SignedMantissa {
    debug_assert!(mag < (1 << spec.padded_width));
    let v = i64::from(mag);
    SignedMantissa(if sign { -v } else { v })
}

/// Exponent used for alignment: the biased field, or 0 for flushed operands.
pub fn alignment_exponent(c: &FpComponents) -> u32 {
    match c.class {
        FpClass::Normal => c.exponent,
        _ => 0,
    }
}

pub fn encode(sign: bool, unbiased_exp: i32, frac: u32, spec: &PrecisionSpec) -> u16 {
    debug_assert!(frac < (1 << spec.frac_bits));
    let sign_bits = if sign { spec.sign_mask() } else { 0 };
    let biased = unbiased_exp + spec.bias;
    if biased >= spec.exp_all_ones() as i32 {
        spec.infinity(sign)
    } else if biased <= 0 {
        sign_bits
    } else {
        sign_bits | ((biased as u16) << spec.frac_bits) | frac as u16
    }
}

/// Packs a significand given as its top `frac_bits + 1` bits (leading one
/// included) plus guard and sticky information.
pub fn pack_rounded(
    sign: bool,
    unbiased_exp: i32,
    top: u64,
    guard: bool,
    sticky: bool,
    rounding: Rounding,
    spec: &PrecisionSpec,
) -> u16 {
    debug_assert_eq!(top >> spec.frac_bits, 1);
    let mut top = top;
    let mut exp = unbiased_exp;
    if rounding == Rounding::RoundNearestEven && guard && (sticky || top & 1 == 1) {
        top += 1;
        if top >> (spec.frac_bits + 1) != 0 {
            top >>= 1;
            exp += 1;
        }
    }
    let frac = (top & ((1 << spec.frac_bits) - 1)) as u32;
    encode(sign, exp, frac, spec)
}

/// Rounds an integer magnitude scaled by `2^scale` into a word.
pub fn pack_integer(
    sign: bool,
    mag: u128,
    scale: i32,
    rounding: Rounding,
    spec: &PrecisionSpec,
) -> u16 {
    if mag == 0 {
        return 0;
    }
    let p = 127 - mag.leading_zeros();
    let fb = spec.frac_bits;
    let (top, guard, sticky) = if p >= fb {
        let drop = p - fb;
        let top = (mag >> drop) as u64;
        let guard = drop > 0 && (mag >> (drop - 1)) & 1 == 1;
        let sticky = drop > 1 && mag & ((1u128 << (drop - 1)) - 1) != 0;
        (top, guard, sticky)
    } else {
        ((mag << (fb - p)) as u64, false, false)
    };
    pack_rounded(sign, scale + p as i32, top, guard, sticky, rounding, spec)
}

/// Real value of a word. Subnormals are interpreted at their IEEE value here;
/// only the compute path flushes them.
pub fn to_f64(word: u16, spec: &PrecisionSpec) -> f64 {
    if spec.format == Format::Int8 {
        return f64::from(word as u8 as i8);
    }
    let c = decode(word, spec);
    let s = if c.sign { -1.0 } else { 1.0 };
    let fb = spec.frac_bits as i32;
    match c.class {
        FpClass::Zero => s * 0.0,
        FpClass::Subnormal => s * f64::from(c.fraction) * 2f64.powi(1 - spec.bias - fb),
        FpClass::Normal => {
            s * f64::from((1 << spec.frac_bits) | c.fraction)
                * 2f64.powi(c.exponent as i32 - spec.bias - fb)
        }
        FpClass::Inf => s * f64::INFINITY,
        FpClass::NaN => f64::NAN,
    }
}

/// Converts a real to the nearest word. Results below the normal range flush
/// to signed zero and results above it become infinity.
pub fn from_f64(x: f64, rounding: Rounding, spec: &PrecisionSpec) -> u16 {
    debug_assert!(spec.is_float());
    if x.is_nan() {
        return spec.canonical_nan();
    }
    let sign = x.is_sign_negative();
    if x.is_infinite() {
        return spec.infinity(sign);
    }
    if x == 0.0 {
        return if sign { spec.sign_mask() } else { 0 };
    }
    let bits = x.abs().to_bits();
    let biased = (bits >> 52) as i32;
    let (mant, scale) = if biased == 0 {
        (bits & ((1 << 52) - 1), -1074)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), biased - 1075)
    };
    pack_integer(sign, u128::from(mant), scale, rounding, spec)
}
