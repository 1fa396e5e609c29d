//! Output error of adder faults as a function of tree level.

use std::sync::Arc;

use fpcim::codec::{from_f64, to_f64, Rounding};
use fpcim::{CrossbarConfig, FaultSet, FaultSite, FaultSpec, ProgrammedCrossbar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Roughly Gaussian operand with unit-scale spread.
fn operand(rng: &mut ChaCha8Rng) -> f64 {
    (0..4).map(|_| rng.gen::<f64>() - 0.5).sum()
}

/// Mean relative output error per adder level (index 0 is level 1) when
/// `bit` is flipped in one adder per column. Each trial draws fresh operands
/// and one row per column; the faulted adder at every level is the one
/// reducing that row, so levels are compared on the same data path.
pub fn adder_level_errors(
    config: &CrossbarConfig,
    bit: u32,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let spec = config.precision;
    let depth = config.depth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![0.0; depth as usize];
    let mut count = 0usize;
    for _ in 0..trials {
        let word = |rng: &mut ChaCha8Rng| from_f64(operand(rng), Rounding::RoundNearestEven, &spec);
        let x: Vec<u16> = (0..config.ic).map(|_| word(&mut rng)).collect();
        let w: Vec<u16> = (0..config.ic * config.oc).map(|_| word(&mut rng)).collect();
        let rows: Vec<usize> = (0..config.oc)
            .map(|_| rng.gen_range(0..config.ic))
            .collect();
        let clean =
            ProgrammedCrossbar::program(&w, *config, Arc::new(FaultSet::empty()))?.matvec(&x)?;
        for level in 1..=depth {
            let specs = rows
                .iter()
                .enumerate()
                .map(|(col, &row)| {
                    let site = FaultSite::AdderOutput {
                        col,
                        level,
                        index: row >> level,
                    };
                    FaultSpec::new(site, bit, config)
                })
                .collect::<fpcim::Result<Vec<_>>>()?;
            let faults = Arc::new(FaultSet::new(&specs, config)?);
            let y = ProgrammedCrossbar::program(&w, *config, faults)?.matvec(&x)?;
            for (a, b) in y.iter().zip(&clean) {
                let (a, b) = (to_f64(*a, &spec), to_f64(*b, &spec));
                if b != 0.0 {
                    sums[level as usize - 1] += (a - b).abs() / b.abs();
                }
            }
        }
        count += clean.iter().filter(|&&c| to_f64(c, &spec) != 0.0).count();
    }
    Ok(sums.into_iter().map(|s| s / count.max(1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_bit_is_rejected() {
        assert!(adder_level_errors(&CrossbarConfig::baseline(), 40, 1, 0).is_err());
    }
}
