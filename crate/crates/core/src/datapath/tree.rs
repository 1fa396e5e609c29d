use crate::align::{column_exponent, saturating_offset, GroupExponent};
use crate::bits::fits_signed;
use crate::codec::pack_integer;
use crate::config::CrossbarConfig;
use crate::fault::{apply_signed, FaultSet, FaultSite};

use super::trace::{PipelineTrace, Recorder, TraceStage};

/// Re-aligns the group partial sums present at `level` to their column
/// maximum, honoring global-alignment exponent and offset faults.
#[allow(clippy::too_many_arguments)]
fn global_stage(
    sums: &mut [i64],
    group_exps: &[GroupExponent],
    level: u32,
    col: usize,
    first_row: usize,
    config: &CrossbarConfig,
    faults: &FaultSet,
    rec: &mut Recorder<'_>,
) -> GroupExponent {
    assert_eq!(sums.len(), group_exps.len(), "one exponent per group sum");
    let spec = &config.precision;
    let per_col = config.ic >> level;
    let base = first_row >> level;
    let exps: Vec<GroupExponent> = group_exps
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mask = faults.global_exponent(col, base + i, per_col);
            rec.hit(mask, || FaultSite::GlobalAlignExponent {
                col,
                group: base + i,
            });
            let e = GroupExponent(e.0 ^ mask as u32);
            rec.record(
                TraceStage::GlobalExponent,
                &[col, base + i],
                spec.exp_bits,
                i64::from(e.0),
            );
            e
        })
        .collect();
    let column = column_exponent(&exps);
    for (i, s) in sums.iter_mut().enumerate() {
        let mask = faults.global_offset(col, base + i, per_col);
        rec.hit(mask, || FaultSite::GlobalAlignOffset {
            col,
            group: base + i,
        });
        let off = saturating_offset(column.0, exps[i].0) ^ mask as u32;
        rec.record(
            TraceStage::GlobalOffset,
            &[col, base + i],
            4,
            i64::from(off),
        );
        *s >>= off;
        rec.record(
            TraceStage::AlignedSum,
            &[col, level as usize, base + i],
            config.level_width(level),
            *s,
        );
    }
    column
}

/// Pairwise adder tree over one (tile) column. `products` start at crossbar
/// row `first_row`; `group_exps` holds one exponent per alignment group and
/// is empty for INT8. Returns the final sum and the column exponent.
pub fn reduce_column(
    products: &[i64],
    group_exps: &[GroupExponent],
    col: usize,
    first_row: usize,
    config: &CrossbarConfig,
    faults: &FaultSet,
    trace: Option<&mut PipelineTrace>,
) -> (i64, GroupExponent) {
    reduce(
        products,
        group_exps,
        col,
        first_row,
        config,
        faults,
        &mut Recorder(trace),
    )
}

pub(crate) fn reduce(
    products: &[i64],
    group_exps: &[GroupExponent],
    col: usize,
    first_row: usize,
    config: &CrossbarConfig,
    faults: &FaultSet,
    rec: &mut Recorder<'_>,
) -> (i64, GroupExponent) {
    assert_eq!(products.len(), config.tree_rows());
    let ga = config.global_align_level();
    let mut vals = products.to_vec();
    let mut column = GroupExponent::default();
    if ga == Some(0) {
        column = global_stage(
            &mut vals, group_exps, 0, col, first_row, config, faults, rec,
        );
    }
    for level in 1..=config.depth() {
        let width = config.level_width(level);
        let base = first_row >> level;
        let mut next = Vec::with_capacity(vals.len() / 2);
        for (i, pair) in vals.chunks_exact(2).enumerate() {
            let s = pair[0] + pair[1];
            assert!(
                fits_signed(s, width),
                "level-{level} sum {s} overflows {width} bits"
            );
            let mask = faults.adder(col, level, base + i);
            rec.hit(mask, || FaultSite::AdderOutput {
                col,
                level,
                index: base + i,
            });
            let s = apply_signed(s, width, mask);
            rec.record(
                TraceStage::Adder,
                &[col, level as usize, base + i],
                width,
                s,
            );
            next.push(s);
        }
        vals = next;
        if ga == Some(level) {
            column = global_stage(
                &mut vals, group_exps, level, col, first_row, config, faults, rec,
            );
        }
    }
    (vals[0], column)
}

/// Converts a signed mantissa sum carrying `column` as its exponent into an
/// output word: the leading one is located, the bits below it become the
/// fraction, and the exponent is corrected by the leading-one position.
pub fn normalize(sum: i64, column: GroupExponent, config: &CrossbarConfig) -> u16 {
    let spec = &config.precision;
    let scale = column.0 as i32 - spec.bias - 2 * (spec.padded_width as i32 - 1);
    pack_integer(
        sum < 0,
        u128::from(sum.unsigned_abs()),
        scale,
        config.rounding,
        spec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Rounding;

    fn reduce(
        products: &[i64],
        exps: &[GroupExponent],
        cfg: &CrossbarConfig,
    ) -> (i64, GroupExponent) {
        reduce_column(products, exps, 0, 0, cfg, &FaultSet::empty(), None)
    }

    #[test]
    fn reduce_examples() {
        let cfg = CrossbarConfig::baseline();
        let eq = [GroupExponent(127); 8];
        assert_eq!(reduce(&[0; 128], &eq, &cfg).0, 0);
        let mut one = [0i64; 128];
        one[37] = 1 << 22;
        assert_eq!(reduce(&one, &eq, &cfg), (1 << 22, GroupExponent(127)));
        let (s, _) = reduce(&[1 << 22; 128], &eq, &cfg);
        assert_eq!(s, 1 << 29);
        assert!(fits_signed(s, cfg.final_width()));
    }

    #[test]
    fn global_alignment_inside_tree() {
        let cfg = CrossbarConfig::baseline();
        let mut exps = [GroupExponent(127); 8];
        exps[1] = GroupExponent(130);
        let mut p = [0i64; 128];
        p[0] = 1 << 22;
        p[16] = 1 << 22;
        let (s, col) = reduce(&p, &exps, &cfg);
        assert_eq!(col, GroupExponent(130));
        assert_eq!(s, (1 << 22) + (1 << 19));
    }

    #[test]
    fn normalize_examples() {
        let cfg = CrossbarConfig::baseline();
        assert_eq!(normalize(0, GroupExponent(127), &cfg), 0x0000);
        assert_eq!(normalize(1 << 22, GroupExponent(127), &cfg), 0x3F80);
        assert_eq!(normalize(1 << 23, GroupExponent(127), &cfg), 0x4000);
        assert_eq!(normalize(-(1 << 22), GroupExponent(127), &cfg), 0xBF80);
        // 1 + 2^-7 + 2^-8: truncation keeps the odd fraction, RNE rounds up.
        let s = (1 << 22) + (1 << 15) + (1 << 14);
        assert_eq!(normalize(s, GroupExponent(127), &cfg), 0x3F81);
        let rne = cfg.with_rounding(Rounding::RoundNearestEven);
        assert_eq!(normalize(s, GroupExponent(127), &rne), 0x3F82);
        assert_eq!(normalize(1 << 29, GroupExponent(254), &cfg), 0x7F80);
    }
}
