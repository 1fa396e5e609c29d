//! Fixed-width two's-complement helpers.

/// Low `width` bits of `v`.
pub fn to_raw(v: i64, width: u32) -> u64 {
    debug_assert!((1..=64).contains(&width));
    if width == 64 {
        v as u64
    } else {
        (v as u64) & ((1u64 << width) - 1)
    }
}

/// Reinterprets the low `width` bits of `raw` as a signed value.
pub fn sign_extend(raw: u64, width: u32) -> i64 {
    debug_assert!((1..=64).contains(&width));
    let shift = 64 - width;
    ((raw << shift) as i64) >> shift
}

pub fn fits_signed(v: i64, width: u32) -> bool {
    let half = 1i128 << (width - 1);
    let v = i128::from(v);
    -half <= v && v < half
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_extension() {
        assert_eq!(sign_extend(0x1800, 13), -2048);
        assert_eq!(sign_extend(0x0800, 13), 2048);
        assert_eq!(to_raw(-2048, 13), 0x1800);
        assert_eq!(to_raw(-4080, 13), 0x1010);
        assert!(fits_signed(-4096, 13));
        assert!(!fits_signed(4096, 13));
    }
}
