use super::exact::Exact;
use crate::codec::{to_f64, Format, PrecisionSpec, Rounding};

/// Deviation of an observed word from an exact reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub abs: f64,
    pub rel: f64,
    /// Distance in encoded words to the reference rounded to nearest.
    pub ulp: u64,
    pub sign_flipped: bool,
    pub nonfinite: bool,
}

fn smallest_normal(spec: &PrecisionSpec) -> f64 {
    2f64.powi(1 - spec.bias)
}

/// Maps a word to an integer that is monotone in its value.
fn ordered(word: u16, spec: &PrecisionSpec) -> i64 {
    if spec.format == Format::Int8 {
        return i64::from(word as u8 as i8);
    }
    let sign = spec.sign_mask();
    let mag = i64::from(word & (sign - 1));
    if word & sign != 0 {
        -mag
    } else {
        mag
    }
}

pub fn error_report(observed: u16, reference: &Exact, spec: &PrecisionSpec) -> ErrorReport {
    let a = to_f64(observed, spec);
    let b = reference.to_f64();
    if !a.is_finite() {
        return ErrorReport {
            abs: f64::INFINITY,
            rel: f64::INFINITY,
            ulp: u64::MAX,
            sign_flipped: false,
            nonfinite: true,
        };
    }
    let nearest = reference.to_word(Rounding::RoundNearestEven, spec);
    let abs = (a - b).abs();
    ErrorReport {
        abs,
        rel: abs / b.abs().max(smallest_normal(spec)),
        ulp: ordered(observed, spec).abs_diff(ordered(nearest, spec)),
        sign_flipped: a != 0.0 && b != 0.0 && (a < 0.0) != (b < 0.0),
        nonfinite: false,
    }
}

#[cfg(test)]
mod tests {
    use num_bigint::BigInt;

    use super::*;

    fn exact(num: i64, exp: i32) -> Exact {
        Exact {
            num: BigInt::from(num),
            exp,
        }
    }

    #[test]
    fn report_examples() {
        let bf = PrecisionSpec::BF16;
        let one = exact(1, 0);
        let r = error_report(0x3F80, &one, &bf);
        assert_eq!((r.ulp, r.abs, r.rel), (0, 0.0, 0.0));
        let r = error_report(0x3F81, &one, &bf);
        assert_eq!(r.ulp, 1);
        assert_eq!(r.abs, 2f64.powi(-7));
        assert!(!r.sign_flipped);
        let r = error_report(0xBF80, &one, &bf);
        assert!(r.sign_flipped);
        assert_eq!(r.rel, 2.0);
        assert!(error_report(0x7FC0, &one, &bf).nonfinite);
        assert!(error_report(0x7F80, &one, &bf).nonfinite);
        assert_eq!(error_report(0x8000, &Exact::zero(), &bf).ulp, 0);
    }

    #[test]
    fn relative_error_floor() {
        let bf = PrecisionSpec::BF16;
        let r = error_report(0x0080, &Exact::zero(), &bf);
        assert_eq!(r.rel, 1.0);
    }
}
