//! Randomized differential comparison of the datapath against the naive
//! pipeline.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::naive::{naive_int8, naive_pipeline};
use crate::codec::{Format, PrecisionSpec, Rounding};
use crate::config::CrossbarConfig;
use crate::datapath::ProgrammedCrossbar;
use crate::fault::{FaultSet, FaultSite, FaultSpec, Stage};

/// Design points exercised by the fuzzer: both alignment paradigms on both
/// stencils, plus the tiled design without mid-tree alignment.
pub const DESIGNS: [&str; 5] = ["pre", "post", "tiled-pre", "hardened", "tiled-noga"];
pub const FORMATS: [Format; 3] = [Format::Bf16, Format::Fp8E4M3, Format::Int8];

#[derive(Debug, Clone)]
pub struct Case {
    pub config: CrossbarConfig,
    pub inputs: Vec<u16>,
    pub weights: Vec<u16>,
    pub faults: Vec<FaultSpec>,
}

/// A float word with an exponent near `center`, occasionally zero or
/// subnormal.
fn random_word(rng: &mut ChaCha8Rng, spec: &PrecisionSpec, center: u32, spread: u32) -> u16 {
    let roll = rng.gen_range(0..100);
    let sign = u16::from(rng.gen_bool(0.5)) << (spec.exp_bits + spec.frac_bits);
    let frac = rng.gen_range(0..1u16 << spec.frac_bits);
    let exp = match roll {
        0..=7 => return sign * u16::from(rng.gen_bool(0.5)),
        8..=11 => 0,
        _ => {
            let lo = center.saturating_sub(spread).max(1);
            let hi = (center + spread).min(spec.exp_all_ones() - 1);
            rng.gen_range(lo..=hi)
        }
    };
    sign | ((exp as u16) << spec.frac_bits) | frac
}

fn random_faults(rng: &mut ChaCha8Rng, config: &CrossbarConfig) -> Vec<FaultSpec> {
    let stages: Vec<Stage> = Stage::ALL
        .into_iter()
        .filter(|s| s.present_in(config))
        .collect();
    let n = rng.gen_range(0..=4);
    let mut out: Vec<FaultSpec> = Vec::new();
    for _ in 0..n {
        let stage = stages[rng.gen_range(0..stages.len())];
        let i = rng.gen_range(0..stage.unit_count(config, None));
        let site = FaultSite::nth(stage, None, config, i);
        let bit = rng.gen_range(0..stage.width(config, site.level()));
        if out.iter().all(|f| f.site != site || f.bit != bit) {
            out.push(FaultSpec::new(site, bit, config).expect("sampled fault is valid"));
        }
    }
    out
}

pub fn random_case(rng: &mut ChaCha8Rng, design: &str, format: Format) -> Case {
    let rounding = if rng.gen_bool(0.5) {
        Rounding::Truncate
    } else {
        Rounding::RoundNearestEven
    };
    let config = CrossbarConfig::preset(design)
        .expect("known design")
        .with_precision(format)
        .with_rounding(rounding);
    let spec = config.precision;
    let (inputs, weights) = if spec.is_float() {
        let top = spec.exp_all_ones() - 1;
        let spread = rng.gen_range(0..=top / 2);
        let ci = rng.gen_range(1..=top);
        let cw = rng.gen_range(1..=top);
        let inputs = (0..config.ic)
            .map(|_| random_word(rng, &spec, ci, spread))
            .collect();
        let weights = (0..config.ic * config.oc)
            .map(|_| random_word(rng, &spec, cw, spread))
            .collect();
        (inputs, weights)
    } else {
        let byte = |rng: &mut ChaCha8Rng| u16::from(rng.gen::<u8>());
        let inputs = (0..config.ic).map(|_| byte(rng)).collect();
        let weights = (0..config.ic * config.oc).map(|_| byte(rng)).collect();
        (inputs, weights)
    };
    let faults = random_faults(rng, &config);
    Case {
        config,
        inputs,
        weights,
        faults,
    }
}

/// Outcome of comparing one case; `None` means both models agree.
pub fn compare(case: &Case) -> Option<String> {
    let cfg = &case.config;
    let set = Arc::new(FaultSet::new(&case.faults, cfg).expect("valid faults"));
    let programmed = ProgrammedCrossbar::program(&case.weights, *cfg, set);
    if cfg.precision.is_float() {
        let fast = programmed.and_then(|p| p.matvec(&case.inputs));
        let slow = naive_pipeline(&case.inputs, &case.weights, cfg, &case.faults);
        match (fast, slow) {
            (Ok(a), Ok(b)) if a == b => None,
            (Err(_), Err(_)) => None,
            (a, b) => Some(format!(
                "{cfg}: datapath {a:?} vs naive {b:?} with faults {:?}",
                case.faults
            )),
        }
    } else {
        let x: Vec<i8> = case.inputs.iter().map(|&w| w as u8 as i8).collect();
        let w: Vec<i8> = case.weights.iter().map(|&w| w as u8 as i8).collect();
        let fast = programmed.and_then(|p| p.int8_matvec(&x));
        let slow = naive_int8(&x, &w, cfg, &case.faults);
        match (fast, slow) {
            (Ok(a), Ok(b)) if a == b => None,
            (a, b) => Some(format!(
                "{cfg}: datapath {a:?} vs naive {b:?} with faults {:?}",
                case.faults
            )),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DiffSummary {
    pub cases: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<String>,
}

/// Runs `cases` random cases spread evenly over every design and format.
pub fn run_differential(cases: usize, seed: u64) -> DiffSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = DiffSummary::default();
    let combos: Vec<(&str, Format)> = DESIGNS
        .iter()
        .flat_map(|d| FORMATS.iter().map(move |f| (*d, *f)))
        .collect();
    for i in 0..cases {
        let (design, format) = combos[i % combos.len()];
        let case = random_case(&mut rng, design, format);
        summary.cases += 1;
        if let Some(msg) = compare(&case) {
            summary.mismatches += 1;
            summary.first_mismatch.get_or_insert(msg);
        }
    }
    summary
}

/// Operands with one exponent for every input and one exponent per weight
/// column, so neither alignment stage shifts out any bit.
pub fn alignment_free_case(rng: &mut ChaCha8Rng, config: CrossbarConfig) -> Case {
    let spec = config.precision;
    let bias = spec.bias as u32;
    let word = |rng: &mut ChaCha8Rng, exp: u32| {
        let sign = u16::from(rng.gen_bool(0.5)) << (spec.exp_bits + spec.frac_bits);
        sign | ((exp as u16) << spec.frac_bits) | rng.gen_range(0..1u16 << spec.frac_bits)
    };
    let near_bias = |rng: &mut ChaCha8Rng| rng.gen_range(bias - 3..=bias + 3);
    let ex = near_bias(rng);
    let inputs = (0..config.ic).map(|_| word(rng, ex)).collect();
    let col_exp: Vec<u32> = (0..config.oc).map(|_| near_bias(rng)).collect();
    let weights = (0..config.ic * config.oc)
        .map(|i| word(rng, col_exp[i % config.oc]))
        .collect();
    Case {
        config,
        inputs,
        weights,
        faults: Vec::new(),
    }
}
