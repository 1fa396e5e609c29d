//! Straight-line re-implementation of the crossbar arithmetic used only for
//! differential testing. It shares no code with `datapath`, `align` or
//! `codec`; only the configuration and fault descriptions are common.

// Index loops mirror the hardware description on purpose.
#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use super::exact::Exact;
use crate::codec::Rounding;
use crate::config::{CrossbarConfig, Paradigm, Stencil};
use crate::error::{Error, Result};
use crate::fault::{FaultSite, FaultSpec};

fn fault_masks(faults: &[FaultSpec]) -> HashMap<FaultSite, u64> {
    let mut masks = HashMap::new();
    for f in faults {
        *masks.entry(f.site).or_insert(0) ^= 1u64 << f.bit;
    }
    masks
}

/// Reads `raw`'s low `width` bits as a two's-complement number.
fn wrap(raw: i64, width: u32) -> i64 {
    let modulus = 1i64 << width;
    let r = raw.rem_euclid(modulus);
    if r >= modulus / 2 {
        r - modulus
    } else {
        r
    }
}

fn xor_in(v: i64, width: u32, mask: u64) -> i64 {
    let modulus = 1i64 << width;
    wrap(v.rem_euclid(modulus) ^ mask as i64, width)
}

fn floor_shift(v: i64, k: u32) -> i64 {
    v.div_euclid(1i64 << k)
}

fn gap(max: i64, e: i64) -> u32 {
    if max <= e {
        0
    } else {
        (max - e).min(15) as u32
    }
}

struct Operand {
    mantissa: i64,
    exponent: i64,
}

fn split(word: u16, cfg: &CrossbarConfig, what: &str) -> Result<Operand> {
    let s = &cfg.precision;
    let all_ones = (1u32 << s.exp_bits) - 1;
    let w = u32::from(word);
    let frac = w % (1 << s.frac_bits);
    let exp = (w >> s.frac_bits) % (1 << s.exp_bits);
    let negative = (w >> (s.frac_bits + s.exp_bits)) % 2 == 1;
    if exp == all_ones {
        return Err(Error::NonFinite(format!("{what} {word:#06x}")));
    }
    if exp == 0 {
        return Ok(Operand {
            mantissa: 0,
            exponent: 0,
        });
    }
    let padded =
        i64::from((1 << s.frac_bits) + frac) * (1i64 << (s.padded_width - s.frac_bits - 1));
    Ok(Operand {
        mantissa: if negative { -padded } else { padded },
        exponent: i64::from(exp),
    })
}

fn pack(negative: bool, unbiased: i64, frac: i64, cfg: &CrossbarConfig) -> u16 {
    let s = &cfg.precision;
    let sign_bit = 1u16 << (s.exp_bits + s.frac_bits);
    let sign = if negative { sign_bit } else { 0 };
    let all_ones = (1i64 << s.exp_bits) - 1;
    let biased = unbiased + i64::from(s.bias);
    if biased >= all_ones {
        sign | ((all_ones as u16) << s.frac_bits)
    } else if biased <= 0 {
        sign
    } else {
        sign | ((biased as u16) << s.frac_bits) | frac as u16
    }
}

fn normalize_naive(sum: i64, col_exp: i64, cfg: &CrossbarConfig) -> u16 {
    let s = &cfg.precision;
    if sum == 0 {
        return 0;
    }
    let negative = sum < 0;
    let mag = sum.abs();
    let mut lead = 0i64;
    while mag >> (lead + 1) != 0 {
        lead += 1;
    }
    let fb = i64::from(s.frac_bits);
    let mut unbiased = col_exp - i64::from(s.bias) + lead - 2 * (i64::from(s.padded_width) - 1);
    let mut sig;
    if lead >= fb {
        let cut = lead - fb;
        sig = mag >> cut;
        let rem = mag - (sig << cut);
        if cfg.rounding == Rounding::RoundNearestEven && cut > 0 {
            let half = 1i64 << (cut - 1);
            if rem > half || (rem == half && sig % 2 == 1) {
                sig += 1;
                if sig == 1 << (fb + 1) {
                    sig >>= 1;
                    unbiased += 1;
                }
            }
        }
    } else {
        sig = mag << (fb - lead);
    }
    pack(negative, unbiased, sig - (1 << fb), cfg)
}

fn merge_naive(words: &[u16], cfg: &CrossbarConfig) -> u16 {
    let s = &cfg.precision;
    let all_ones = (1u32 << s.exp_bits) - 1;
    let sign_bit = 1u32 << (s.exp_bits + s.frac_bits);
    let mut total = BigRational::zero();
    let (mut nan, mut plus, mut minus) = (false, false, false);
    for &w in words {
        let w = u32::from(w);
        let frac = w % (1 << s.frac_bits);
        let exp = (w >> s.frac_bits) % (1 << s.exp_bits);
        let negative = w & sign_bit != 0;
        if exp == all_ones {
            if frac != 0 {
                nan = true;
            } else if negative {
                minus = true;
            } else {
                plus = true;
            }
            continue;
        }
        if exp == 0 {
            continue;
        }
        let sig = BigInt::from((1u32 << s.frac_bits) + frac);
        let e = exp as i32 - s.bias - s.frac_bits as i32;
        let two = BigInt::from(2);
        let mut v = if e >= 0 {
            BigRational::from_integer(sig * two.pow(e as u32))
        } else {
            BigRational::new(sig, two.pow((-e) as u32))
        };
        if negative {
            v = -v;
        }
        total += v;
    }
    if nan || (plus && minus) {
        let quiet = 1u16 << (s.frac_bits - 1);
        return ((all_ones as u16) << s.frac_bits) | quiet;
    }
    if plus || minus {
        let inf = (all_ones as u16) << s.frac_bits;
        return if minus { inf | sign_bit as u16 } else { inf };
    }
    if total.is_zero() {
        return 0;
    }
    // Denominators are powers of two.
    let denom = total.denom();
    let k = denom.bits() as i32 - 1;
    let numer = total.numer().clone();
    debug_assert!(numer.is_negative() || !numer.is_zero());
    Exact {
        num: numer,
        exp: -k,
    }
    .to_word(cfg.rounding, s)
}

/// Floating-point crossbar evaluation written element by element.
pub fn naive_pipeline(
    inputs: &[u16],
    weights: &[u16],
    cfg: &CrossbarConfig,
    faults: &[FaultSpec],
) -> Result<Vec<u16>> {
    let (ic, oc) = (cfg.ic, cfg.oc);
    if inputs.len() != ic || weights.len() != ic * oc {
        return Err(Error::Dimension(
            "operand sizes do not match the crossbar".into(),
        ));
    }
    let s = cfg.precision;
    let all_ones = (1i64 << s.exp_bits) - 1;
    let bias = i64::from(s.bias);
    let masks = fault_masks(faults);
    let m = |site: FaultSite| masks.get(&site).copied().unwrap_or(0);

    let mut x = Vec::new();
    for (r, &w) in inputs.iter().enumerate() {
        x.push(split(w, cfg, &format!("input {r}"))?);
    }
    let mut wt: Vec<Vec<Operand>> = Vec::new();
    for r in 0..ic {
        let mut row = Vec::new();
        for c in 0..oc {
            row.push(split(
                weights[r * oc + c],
                cfg,
                &format!("weight ({r},{c})"),
            )?);
        }
        wt.push(row);
    }

    // Stage 1: operands as they reach the multipliers.
    let mut a = vec![0i64; ic];
    let mut cell = vec![vec![0i64; oc]; ic];
    let mut in_group_exp = Vec::new();
    let mut w_group_exp = Vec::new();
    match cfg.paradigm {
        Paradigm::PreAlignment { group } => {
            for k in 0..ic / group {
                let mut max = 0i64;
                for r in k * group..(k + 1) * group {
                    max = max.max(x[r].exponent);
                }
                max ^= m(FaultSite::InputExponent { group: k }) as i64;
                in_group_exp.push(max);
                for r in k * group..(k + 1) * group {
                    let off = gap(max, x[r].exponent) ^ m(FaultSite::InputOffset { row: r }) as u32;
                    a[r] = floor_shift(x[r].mantissa, off);
                }
            }
            for c in 0..oc {
                let mut col_exps = Vec::new();
                for k in 0..ic / group {
                    let mut max = 0i64;
                    for r in k * group..(k + 1) * group {
                        max = max.max(wt[r][c].exponent);
                    }
                    max ^= m(FaultSite::WeightExponent { group: k, col: c }) as i64;
                    col_exps.push(max);
                    for r in k * group..(k + 1) * group {
                        let off = gap(max, wt[r][c].exponent)
                            ^ m(FaultSite::WeightOffset { row: r, col: c }) as u32;
                        cell[r][c] = floor_shift(wt[r][c].mantissa, off);
                    }
                }
                w_group_exp.push(col_exps);
            }
        }
        Paradigm::PostAlignment { .. } => {
            for r in 0..ic {
                a[r] = x[r].mantissa;
                for c in 0..oc {
                    cell[r][c] = wt[r][c].mantissa;
                }
            }
        }
    }
    for r in 0..ic {
        for c in 0..oc {
            cell[r][c] = xor_in(
                cell[r][c],
                s.operand_width,
                m(FaultSite::MemoryCell { row: r, col: c }),
            );
        }
    }

    let rows_per_tree = match cfg.stencil {
        Stencil::Monolithic => ic,
        Stencil::Tiled { ic: t, .. } => t,
    };
    let depth = rows_per_tree.trailing_zeros();
    let group = cfg.paradigm.group_size();
    let ga_level = group.trailing_zeros();

    let mut out = Vec::new();
    for c in 0..oc {
        let mut block_words = Vec::new();
        for b in 0..ic / rows_per_tree {
            let first = b * rows_per_tree;
            let mut vals = Vec::new();
            for r in first..first + rows_per_tree {
                let p = a[r] * cell[r][c];
                vals.push(xor_in(
                    p,
                    s.product_width,
                    m(FaultSite::MultiplierOutput { row: r, col: c }),
                ));
            }
            let mut gexp = Vec::new();
            match cfg.paradigm {
                Paradigm::PreAlignment { .. } => {
                    for k in first / group..(first + rows_per_tree) / group {
                        gexp.push((in_group_exp[k] + w_group_exp[c][k] - bias).clamp(0, all_ones));
                    }
                }
                Paradigm::PostAlignment { .. } => {
                    for j in 0..rows_per_tree / group {
                        let mut pe = Vec::new();
                        for i in 0..group {
                            let r = first + j * group + i;
                            pe.push((x[r].exponent + wt[r][c].exponent - bias).clamp(0, all_ones));
                        }
                        let max = *pe.iter().max().unwrap();
                        for i in 0..group {
                            let v = &mut vals[j * group + i];
                            *v = floor_shift(*v, gap(max, pe[i]));
                        }
                        gexp.push(max);
                    }
                }
            }

            let mut col_exp = 0i64;
            let realign = |vals: &mut Vec<i64>, level: u32| {
                let base = first >> level;
                let mut e = Vec::new();
                for (i, g) in gexp.iter().enumerate() {
                    e.push(
                        g ^ m(FaultSite::GlobalAlignExponent {
                            col: c,
                            group: base + i,
                        }) as i64,
                    );
                }
                let top = *e.iter().max().unwrap();
                for i in 0..vals.len() {
                    let off = gap(top, e[i])
                        ^ m(FaultSite::GlobalAlignOffset {
                            col: c,
                            group: base + i,
                        }) as u32;
                    vals[i] = floor_shift(vals[i], off);
                }
                top
            };
            if ga_level == 0 {
                col_exp = realign(&mut vals, 0);
            }
            for level in 1..=depth {
                let width = s.product_width + level;
                let mut next = Vec::new();
                for i in 0..vals.len() / 2 {
                    let sum = vals[2 * i] + vals[2 * i + 1];
                    assert!(sum.abs() <= 1i64 << (width - 1), "naive adder overflow");
                    let idx = (first >> level) + i;
                    next.push(xor_in(
                        sum,
                        width,
                        m(FaultSite::AdderOutput {
                            col: c,
                            level,
                            index: idx,
                        }),
                    ));
                }
                vals = next;
                if level == ga_level {
                    col_exp = realign(&mut vals, level);
                }
            }
            let word = normalize_naive(vals[0], col_exp, cfg);
            block_words.push(word ^ m(FaultSite::NormalizedOutput { block: b, col: c }) as u16);
        }
        out.push(if block_words.len() == 1 {
            block_words[0]
        } else {
            merge_naive(&block_words, cfg)
        });
    }
    Ok(out)
}

/// Signed 8-bit crossbar evaluation written element by element.
pub fn naive_int8(
    inputs: &[i8],
    weights: &[i8],
    cfg: &CrossbarConfig,
    faults: &[FaultSpec],
) -> Result<Vec<i64>> {
    let (ic, oc) = (cfg.ic, cfg.oc);
    if inputs.len() != ic || weights.len() != ic * oc {
        return Err(Error::Dimension(
            "operand sizes do not match the crossbar".into(),
        ));
    }
    let masks = fault_masks(faults);
    let m = |site: FaultSite| masks.get(&site).copied().unwrap_or(0);
    let rows_per_tree = match cfg.stencil {
        Stencil::Monolithic => ic,
        Stencil::Tiled { ic: t, .. } => t,
    };
    let mut out = Vec::new();
    for c in 0..oc {
        let mut total = 0i64;
        for b in 0..ic / rows_per_tree {
            let first = b * rows_per_tree;
            let mut vals = Vec::new();
            for r in first..first + rows_per_tree {
                let w = xor_in(
                    i64::from(weights[r * oc + c]),
                    8,
                    m(FaultSite::MemoryCell { row: r, col: c }),
                );
                let p = i64::from(inputs[r]) * w;
                vals.push(xor_in(
                    p,
                    16,
                    m(FaultSite::MultiplierOutput { row: r, col: c }),
                ));
            }
            let mut level = 0;
            while vals.len() > 1 {
                level += 1;
                let mut next = Vec::new();
                for i in 0..vals.len() / 2 {
                    let idx = (first >> level) + i;
                    let sum = vals[2 * i] + vals[2 * i + 1];
                    next.push(xor_in(
                        sum,
                        16 + level,
                        m(FaultSite::AdderOutput {
                            col: c,
                            level,
                            index: idx,
                        }),
                    ));
                }
                vals = next;
            }
            total += vals[0];
        }
        out.push(total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_examples() {
        let cfg = CrossbarConfig::baseline();
        let mut x = vec![0u16; 128];
        let mut w = vec![0u16; 128 * 32];
        assert!(naive_pipeline(&x, &w, &cfg, &[])
            .unwrap()
            .iter()
            .all(|&o| o == 0));
        x[5] = 0x3F80;
        for c in 0..32 {
            w[5 * 32 + c] = 0x4000 + c as u16;
        }
        let out = naive_pipeline(&x, &w, &cfg, &[]).unwrap();
        for c in 0..32 {
            assert_eq!(out[c], 0x4000 + c as u16);
        }
    }

    #[test]
    fn wrap_and_xor() {
        assert_eq!(wrap(4096 + 2048, 13), -2048);
        assert_eq!(xor_in(2048, 13, 1 << 12), -2048);
        assert_eq!(xor_in(1 << 22, 26, 1 << 25), (1 << 22) - (1 << 25));
        assert_eq!(floor_shift(-1, 5), -1);
    }
}
