//! Persistent single-bit-flip faults: locations, sampling, application and
//! bit-error-rate accounting.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::OFFSET_BITS;
use crate::bits::{sign_extend, to_raw};
use crate::config::CrossbarConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    InputOffset,
    InputExponent,
    WeightOffset,
    WeightExponent,
    MemoryCell,
    MultiplierOutput,
    AdderOutput,
    GlobalAlignOffset,
    GlobalAlignExponent,
    NormalizedOutput,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::InputOffset,
        Stage::InputExponent,
        Stage::WeightOffset,
        Stage::WeightExponent,
        Stage::MemoryCell,
        Stage::MultiplierOutput,
        Stage::AdderOutput,
        Stage::GlobalAlignOffset,
        Stage::GlobalAlignExponent,
        Stage::NormalizedOutput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::InputOffset => "input-offset",
            Stage::InputExponent => "input-exponent",
            Stage::WeightOffset => "weight-offset",
            Stage::WeightExponent => "weight-exponent",
            Stage::MemoryCell => "memory-cell",
            Stage::MultiplierOutput => "multiplier-output",
            Stage::AdderOutput => "adder-output",
            Stage::GlobalAlignOffset => "global-align-offset",
            Stage::GlobalAlignExponent => "global-align-exponent",
            Stage::NormalizedOutput => "normalized-output",
        }
    }

    /// Output bit-width `N_B` of the stage. `level` only matters for adders.
    pub fn width(self, config: &CrossbarConfig, level: u32) -> u32 {
        let p = &config.precision;
        match self {
            Stage::InputOffset | Stage::WeightOffset | Stage::GlobalAlignOffset => OFFSET_BITS,
            Stage::InputExponent | Stage::WeightExponent | Stage::GlobalAlignExponent => p.exp_bits,
            Stage::MemoryCell => p.operand_width,
            Stage::MultiplierOutput => p.product_width,
            Stage::AdderOutput => config.level_width(level),
            Stage::NormalizedOutput => p.word_bits(),
        }
    }

    /// Whether the stage exists in the given architecture.
    pub fn present_in(self, config: &CrossbarConfig) -> bool {
        let float = config.precision.is_float();
        match self {
            Stage::MemoryCell | Stage::MultiplierOutput | Stage::AdderOutput => true,
            Stage::InputOffset
            | Stage::InputExponent
            | Stage::WeightOffset
            | Stage::WeightExponent => float && config.paradigm.is_pre(),
            Stage::GlobalAlignOffset | Stage::GlobalAlignExponent | Stage::NormalizedOutput => {
                float
            }
        }
    }

    /// Number of physical units of this stage. Adders are counted for one
    /// level when `level` is given, otherwise across the whole tree.
    pub fn unit_count(self, config: &CrossbarConfig, level: Option<u32>) -> usize {
        let (ic, oc) = (config.ic, config.oc);
        let g = config.paradigm.group_size();
        match self {
            Stage::InputOffset => ic,
            Stage::InputExponent => ic / g,
            Stage::WeightOffset | Stage::MemoryCell | Stage::MultiplierOutput => ic * oc,
            Stage::WeightExponent => ic / g * oc,
            Stage::AdderOutput => match level {
                Some(l) => oc * (ic >> l),
                None => (1..=config.depth()).map(|l| oc * (ic >> l)).sum(),
            },
            Stage::GlobalAlignOffset | Stage::GlobalAlignExponent => {
                oc * (ic >> config.global_align_level().unwrap_or(0))
            }
            Stage::NormalizedOutput => config.row_blocks() * oc,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == norm || st.name().replace('-', "") == norm)
            .ok_or_else(|| Error::Fault(format!("unknown stage `{s}`")))
    }
}

/// Physical location of a faulty unit. Rows and columns are crossbar-global;
/// adder and global-alignment groups are numbered by `first_row >> level`,
/// which is the same numbering for monolithic and tiled stencils.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultSite {
    InputOffset {
        row: usize,
    },
    InputExponent {
        group: usize,
    },
    WeightOffset {
        row: usize,
        col: usize,
    },
    WeightExponent {
        group: usize,
        col: usize,
    },
    MemoryCell {
        row: usize,
        col: usize,
    },
    MultiplierOutput {
        row: usize,
        col: usize,
    },
    AdderOutput {
        col: usize,
        level: u32,
        index: usize,
    },
    GlobalAlignOffset {
        col: usize,
        group: usize,
    },
    GlobalAlignExponent {
        col: usize,
        group: usize,
    },
    /// `block` is the tile row for tiled stencils and 0 otherwise.
    NormalizedOutput {
        block: usize,
        col: usize,
    },
}

impl FaultSite {
    pub fn stage(&self) -> Stage {
        match self {
            FaultSite::InputOffset { .. } => Stage::InputOffset,
            FaultSite::InputExponent { .. } => Stage::InputExponent,
            FaultSite::WeightOffset { .. } => Stage::WeightOffset,
            FaultSite::WeightExponent { .. } => Stage::WeightExponent,
            FaultSite::MemoryCell { .. } => Stage::MemoryCell,
            FaultSite::MultiplierOutput { .. } => Stage::MultiplierOutput,
            FaultSite::AdderOutput { .. } => Stage::AdderOutput,
            FaultSite::GlobalAlignOffset { .. } => Stage::GlobalAlignOffset,
            FaultSite::GlobalAlignExponent { .. } => Stage::GlobalAlignExponent,
            FaultSite::NormalizedOutput { .. } => Stage::NormalizedOutput,
        }
    }

    pub fn level(&self) -> u32 {
        match self {
            FaultSite::AdderOutput { level, .. } => *level,
            _ => 0,
        }
    }

    /// Column the fault is confined to, if any. Input-side faults reach
    /// every column.
    pub fn column(&self) -> Option<usize> {
        match *self {
            FaultSite::InputOffset { .. } | FaultSite::InputExponent { .. } => None,
            FaultSite::WeightOffset { col, .. }
            | FaultSite::WeightExponent { col, .. }
            | FaultSite::MemoryCell { col, .. }
            | FaultSite::MultiplierOutput { col, .. }
            | FaultSite::AdderOutput { col, .. }
            | FaultSite::GlobalAlignOffset { col, .. }
            | FaultSite::GlobalAlignExponent { col, .. }
            | FaultSite::NormalizedOutput { col, .. } => Some(col),
        }
    }

    fn coords(&self) -> Vec<usize> {
        match *self {
            FaultSite::InputOffset { row } => vec![row],
            FaultSite::InputExponent { group } => vec![group],
            FaultSite::WeightOffset { row, col }
            | FaultSite::MemoryCell { row, col }
            | FaultSite::MultiplierOutput { row, col } => vec![row, col],
            FaultSite::WeightExponent { group, col } => vec![group, col],
            FaultSite::AdderOutput { col, level, index } => vec![col, level as usize, index],
            FaultSite::GlobalAlignOffset { col, group }
            | FaultSite::GlobalAlignExponent { col, group } => {
                vec![col, group]
            }
            FaultSite::NormalizedOutput { block, col } => vec![block, col],
        }
    }

    fn from_coords(stage: Stage, c: &[usize]) -> Result<FaultSite> {
        let want = match stage {
            Stage::InputOffset | Stage::InputExponent => 1,
            Stage::AdderOutput => 3,
            _ => 2,
        };
        if c.len() != want {
            return Err(Error::Parse(format!(
                "{stage} takes {want} coordinates, got {}",
                c.len()
            )));
        }
        Ok(match stage {
            Stage::InputOffset => FaultSite::InputOffset { row: c[0] },
            Stage::InputExponent => FaultSite::InputExponent { group: c[0] },
            Stage::WeightOffset => FaultSite::WeightOffset {
                row: c[0],
                col: c[1],
            },
            Stage::WeightExponent => FaultSite::WeightExponent {
                group: c[0],
                col: c[1],
            },
            Stage::MemoryCell => FaultSite::MemoryCell {
                row: c[0],
                col: c[1],
            },
            Stage::MultiplierOutput => FaultSite::MultiplierOutput {
                row: c[0],
                col: c[1],
            },
            Stage::AdderOutput => FaultSite::AdderOutput {
                col: c[0],
                level: c[1] as u32,
                index: c[2],
            },
            Stage::GlobalAlignOffset => FaultSite::GlobalAlignOffset {
                col: c[0],
                group: c[1],
            },
            Stage::GlobalAlignExponent => FaultSite::GlobalAlignExponent {
                col: c[0],
                group: c[1],
            },
            Stage::NormalizedOutput => FaultSite::NormalizedOutput {
                block: c[0],
                col: c[1],
            },
        })
    }

    /// Enumerates the `i`-th unit of a stage, matching `Stage::unit_count`.
    pub fn nth(stage: Stage, level: Option<u32>, config: &CrossbarConfig, i: usize) -> FaultSite {
        let (ic, oc) = (config.ic, config.oc);
        match stage {
            Stage::InputOffset => FaultSite::InputOffset { row: i },
            Stage::InputExponent => FaultSite::InputExponent { group: i },
            Stage::WeightOffset => FaultSite::WeightOffset {
                row: i / oc,
                col: i % oc,
            },
            Stage::MemoryCell => FaultSite::MemoryCell {
                row: i / oc,
                col: i % oc,
            },
            Stage::MultiplierOutput => FaultSite::MultiplierOutput {
                row: i / oc,
                col: i % oc,
            },
            Stage::WeightExponent => FaultSite::WeightExponent {
                group: i / oc,
                col: i % oc,
            },
            Stage::AdderOutput => {
                let mut i = i;
                let levels: Vec<u32> = match level {
                    Some(l) => vec![l],
                    None => (1..=config.depth()).collect(),
                };
                for l in levels {
                    let per_col = ic >> l;
                    if i < per_col * oc {
                        return FaultSite::AdderOutput {
                            col: i / per_col,
                            level: l,
                            index: i % per_col,
                        };
                    }
                    i -= per_col * oc;
                }
                unreachable!("adder unit index out of range")
            }
            Stage::GlobalAlignOffset | Stage::GlobalAlignExponent => {
                let per_col = ic >> config.global_align_level().unwrap_or(0);
                let (col, group) = (i / per_col, i % per_col);
                if stage == Stage::GlobalAlignOffset {
                    FaultSite::GlobalAlignOffset { col, group }
                } else {
                    FaultSite::GlobalAlignExponent { col, group }
                }
            }
            Stage::NormalizedOutput => FaultSite::NormalizedOutput {
                block: i / oc,
                col: i % oc,
            },
        }
    }
}

/// One persistent bit-flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaultSpec {
    pub site: FaultSite,
    pub bit: u32,
}

impl FaultSpec {
    /// Builds a fault after checking its location and bit against `config`.
    pub fn new(site: FaultSite, bit: u32, config: &CrossbarConfig) -> Result<FaultSpec> {
        let spec = FaultSpec { site, bit };
        spec.validate(config)?;
        Ok(spec)
    }

    pub fn stage(&self) -> Stage {
        self.site.stage()
    }

    pub fn validate(&self, config: &CrossbarConfig) -> Result<()> {
        let stage = self.stage();
        if !stage.present_in(config) {
            return Err(Error::Fault(format!(
                "stage {stage} does not exist in {config}"
            )));
        }
        let (ic, oc) = (config.ic, config.oc);
        let g = config.paradigm.group_size();
        let in_range = match self.site {
            FaultSite::InputOffset { row } => row < ic,
            FaultSite::InputExponent { group } => group < ic / g,
            FaultSite::WeightOffset { row, col }
            | FaultSite::MemoryCell { row, col }
            | FaultSite::MultiplierOutput { row, col } => row < ic && col < oc,
            FaultSite::WeightExponent { group, col } => group < ic / g && col < oc,
            FaultSite::AdderOutput { col, level, index } => {
                col < oc && level >= 1 && level <= config.depth() && index < (ic >> level)
            }
            FaultSite::GlobalAlignOffset { col, group }
            | FaultSite::GlobalAlignExponent { col, group } => {
                col < oc && group < (ic >> config.global_align_level().unwrap_or(0))
            }
            FaultSite::NormalizedOutput { block, col } => block < config.row_blocks() && col < oc,
        };
        if !in_range {
            return Err(Error::Fault(format!(
                "{:?} lies outside {config}",
                self.site
            )));
        }
        let width = stage.width(config, self.site.level());
        if self.bit >= width {
            return Err(Error::Fault(format!(
                "bit {} outside the {width}-bit {stage} word",
                self.bit
            )));
        }
        Ok(())
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let coords: Vec<String> = self.site.coords().iter().map(|c| c.to_string()).collect();
        write!(f, "{} {} {}", self.stage(), coords.join(","), self.bit)
    }
}

impl FromStr for FaultSpec {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!(
                "expected `stage coords bit`, got `{line}`"
            )));
        }
        let stage: Stage = parts[0].parse()?;
        let coords = parts[1]
            .split(',')
            .map(|c| c.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("bad coordinates `{}`: {e}", parts[1])))?;
        let bit = parts[2]
            .parse::<u32>()
            .map_err(|e| Error::Parse(format!("bad bit `{}`: {e}", parts[2])))?;
        Ok(FaultSpec {
            site: FaultSite::from_coords(stage, &coords)?,
            bit,
        })
    }
}

/// Flips `bit` of a `width`-bit word.
pub fn flip(x: u64, width: u32, bit: u32) -> Result<u64> {
    if bit >= width {
        return Err(Error::Fault(format!(
            "bit {bit} outside a {width}-bit word"
        )));
    }
    Ok(x ^ (1 << bit))
}

/// XORs `mask` into the `width`-bit two's-complement image of `v`.
pub fn apply_signed(v: i64, width: u32, mask: u64) -> i64 {
    if mask == 0 {
        v
    } else {
        sign_extend(to_raw(v, width) ^ mask, width)
    }
}

/// Bit-error rate of a stage: faulty fraction spread over its bit-width.
pub fn ber(fraction: f64, n_bits: u32) -> f64 {
    assert!(n_bits >= 1);
    fraction / f64::from(n_bits)
}

/// Faults indexed densely for constant-time lookup on the hot path. Each
/// entry is the XOR mask for one unit.
#[derive(Debug, Clone, Default)]
pub struct FaultSet {
    specs: Vec<FaultSpec>,
    oc: usize,
    ic: usize,
    input_offset: Vec<u64>,
    input_exponent: Vec<u64>,
    weight_offset: Vec<u64>,
    weight_exponent: Vec<u64>,
    memory: Vec<u64>,
    multiplier: Vec<u64>,
    /// Indexed by `level - 1`.
    adder: Vec<Vec<u64>>,
    ga_offset: Vec<u64>,
    ga_exponent: Vec<u64>,
    normalized: Vec<u64>,
}

fn set_mask(table: &mut Vec<u64>, len: usize, idx: usize, bit: u32) {
    if table.is_empty() {
        table.resize(len, 0);
    }
    table[idx] ^= 1 << bit;
}

fn lookup(table: &[u64], idx: usize) -> u64 {
    if table.is_empty() {
        0
    } else {
        table[idx]
    }
}

impl FaultSet {
    pub fn empty() -> FaultSet {
        FaultSet::default()
    }

    pub fn new(specs: &[FaultSpec], config: &CrossbarConfig) -> Result<FaultSet> {
        let (ic, oc) = (config.ic, config.oc);
        let g = config.paradigm.group_size().max(1);
        let mut set = FaultSet {
            specs: specs.to_vec(),
            ic,
            oc,
            adder: vec![Vec::new(); config.depth() as usize],
            ..FaultSet::default()
        };
        let ga_per_col = ic >> config.global_align_level().unwrap_or(0);
        for spec in specs {
            spec.validate(config)?;
            let b = spec.bit;
            match spec.site {
                FaultSite::InputOffset { row } => set_mask(&mut set.input_offset, ic, row, b),
                FaultSite::InputExponent { group } => {
                    set_mask(&mut set.input_exponent, ic / g, group, b)
                }
                FaultSite::WeightOffset { row, col } => {
                    set_mask(&mut set.weight_offset, ic * oc, row * oc + col, b)
                }
                FaultSite::WeightExponent { group, col } => {
                    set_mask(&mut set.weight_exponent, ic / g * oc, group * oc + col, b)
                }
                FaultSite::MemoryCell { row, col } => {
                    set_mask(&mut set.memory, ic * oc, row * oc + col, b)
                }
                FaultSite::MultiplierOutput { row, col } => {
                    set_mask(&mut set.multiplier, ic * oc, row * oc + col, b)
                }
                FaultSite::AdderOutput { col, level, index } => {
                    let per_col = ic >> level;
                    set_mask(
                        &mut set.adder[level as usize - 1],
                        per_col * oc,
                        col * per_col + index,
                        b,
                    )
                }
                FaultSite::GlobalAlignOffset { col, group } => set_mask(
                    &mut set.ga_offset,
                    ga_per_col * oc,
                    col * ga_per_col + group,
                    b,
                ),
                FaultSite::GlobalAlignExponent { col, group } => set_mask(
                    &mut set.ga_exponent,
                    ga_per_col * oc,
                    col * ga_per_col + group,
                    b,
                ),
                FaultSite::NormalizedOutput { block, col } => set_mask(
                    &mut set.normalized,
                    config.row_blocks() * oc,
                    block * oc + col,
                    b,
                ),
            }
        }
        Ok(set)
    }

    pub fn specs(&self) -> &[FaultSpec] {
        &self.specs
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn input_offset(&self, row: usize) -> u64 {
        lookup(&self.input_offset, row)
    }

    pub fn input_exponent(&self, group: usize) -> u64 {
        lookup(&self.input_exponent, group)
    }

    pub fn weight_offset(&self, row: usize, col: usize) -> u64 {
        lookup(&self.weight_offset, row * self.oc + col)
    }

    pub fn weight_exponent(&self, group: usize, col: usize) -> u64 {
        lookup(&self.weight_exponent, group * self.oc + col)
    }

    pub fn memory(&self, row: usize, col: usize) -> u64 {
        lookup(&self.memory, row * self.oc + col)
    }

    pub fn multiplier(&self, row: usize, col: usize) -> u64 {
        lookup(&self.multiplier, row * self.oc + col)
    }

    pub fn has_multiplier_faults(&self) -> bool {
        !self.multiplier.is_empty()
    }

    pub fn adder(&self, col: usize, level: u32, index: usize) -> u64 {
        match self.adder.get(level as usize - 1) {
            Some(t) if !t.is_empty() => t[col * (self.ic >> level) + index],
            _ => 0,
        }
    }

    pub fn has_adder_faults(&self, level: u32) -> bool {
        self.adder
            .get(level as usize - 1)
            .is_some_and(|t| !t.is_empty())
    }

    pub fn global_offset(&self, col: usize, group: usize, groups_per_col: usize) -> u64 {
        lookup(&self.ga_offset, col * groups_per_col + group)
    }

    pub fn global_exponent(&self, col: usize, group: usize, groups_per_col: usize) -> u64 {
        lookup(&self.ga_exponent, col * groups_per_col + group)
    }

    pub fn normalized(&self, block: usize, col: usize) -> u64 {
        lookup(&self.normalized, block * self.oc + col)
    }
}

/// A sampled set of faulty units of one stage, fixed for a whole experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultCampaign {
    pub stage: Stage,
    /// Adder level under test, for adder campaigns restricted to one level.
    pub level: Option<u32>,
    pub bit: u32,
    pub fraction: f64,
    pub seed: u64,
    pub specs: Vec<FaultSpec>,
}

/// `round(fraction * total)` with halves rounded up and at least one unit
/// whenever `fraction > 0`.
pub fn site_count(fraction: f64, total: usize) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    let n = (fraction * total as f64 + 0.5).floor() as usize;
    n.clamp(1, total)
}

pub fn sample_sites(
    stage: Stage,
    level: Option<u32>,
    bit: u32,
    fraction: f64,
    config: &CrossbarConfig,
    seed: u64,
) -> Result<FaultCampaign> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Fault(format!("fraction {fraction} outside [0, 1]")));
    }
    if !stage.present_in(config) {
        return Err(Error::Fault(format!(
            "stage {stage} does not exist in {config}"
        )));
    }
    if let Some(l) = level {
        if stage != Stage::AdderOutput || l == 0 || l > config.depth() {
            return Err(Error::Fault(format!("level {l} is not valid for {stage}")));
        }
    }
    let total = stage.unit_count(config, level);
    let count = site_count(fraction, total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, total, count).into_vec();
    picked.sort_unstable();
    let specs = picked
        .into_iter()
        .map(|i| FaultSpec::new(FaultSite::nth(stage, level, config, i), bit, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(FaultCampaign {
        stage,
        level,
        bit,
        fraction,
        seed,
        specs,
    })
}

impl FaultCampaign {
    pub fn empty(stage: Stage) -> FaultCampaign {
        FaultCampaign {
            stage,
            level: None,
            bit: 0,
            fraction: 0.0,
            seed: 0,
            specs: Vec::new(),
        }
    }

    /// Campaign holding exactly the given faults.
    pub fn from_specs(specs: Vec<FaultSpec>) -> FaultCampaign {
        let stage = specs.first().map_or(Stage::MemoryCell, |s| s.stage());
        FaultCampaign {
            stage,
            level: None,
            bit: specs.first().map_or(0, |s| s.bit),
            fraction: 0.0,
            seed: 0,
            specs,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn fault_set(&self, config: &CrossbarConfig) -> Result<FaultSet> {
        FaultSet::new(&self.specs, config)
    }

    /// Plain-text campaign file: a commented header followed by one
    /// `stage coords bit` line per fault.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# fpcim fault campaign\n");
        out.push_str(&format!(
            "# stage={} level={} bit={} fraction={} seed={}\n",
            self.stage,
            self.level
                .map_or_else(|| "-".to_string(), |l| l.to_string()),
            self.bit,
            self.fraction,
            self.seed
        ));
        for s in &self.specs {
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<FaultCampaign> {
        let mut campaign = FaultCampaign::empty(Stage::MemoryCell);
        let mut header = false;
        let mut seen = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if rest.contains('=') {
                    header = true;
                    for kv in rest.split_whitespace() {
                        let Some((k, v)) = kv.split_once('=') else {
                            continue;
                        };
                        let bad = |e: String| Error::Parse(format!("line {}: {k}: {e}", n + 1));
                        match k {
                            "stage" => campaign.stage = v.parse()?,
                            "level" if v != "-" => {
                                campaign.level = Some(v.parse().map_err(|e| bad(format!("{e}")))?)
                            }
                            "bit" => campaign.bit = v.parse().map_err(|e| bad(format!("{e}")))?,
                            "fraction" => {
                                campaign.fraction = v.parse().map_err(|e| bad(format!("{e}")))?
                            }
                            "seed" => campaign.seed = v.parse().map_err(|e| bad(format!("{e}")))?,
                            _ => {}
                        }
                    }
                }
                continue;
            }
            let spec: FaultSpec = line
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
            if !seen.insert(spec) {
                return Err(Error::Parse(format!(
                    "line {}: duplicate fault `{line}`",
                    n + 1
                )));
            }
            campaign.specs.push(spec);
        }
        if !header {
            if let Some(first) = campaign.specs.first() {
                campaign.stage = first.stage();
                campaign.bit = first.bit;
            }
        }
        Ok(campaign)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::sign_extend;
    use proptest::prelude::*;

    #[test]
    fn flip_examples() {
        let x = flip(1 << 22, 26, 25).unwrap();
        assert_eq!(sign_extend(x, 26), (1 << 22) - (1 << 25));
        assert_eq!(sign_extend(x, 26), -29_360_128);
        assert_eq!(flip(0, 4, 3).unwrap(), 8);
        assert_eq!(flip(0x3F80, 16, 15).unwrap(), 0xBF80);
        assert!(flip(0, 4, 4).is_err());
    }

    #[test]
    fn ber_examples() {
        assert!((ber(0.001, 26) - 3.846e-5).abs() < 5e-9);
        assert!((ber(0.01, 13) - 7.69e-4).abs() < 5e-7);
        assert_eq!(ber(0.0, 7), 0.0);
    }

    #[test]
    fn sample_counts() {
        let cfg = CrossbarConfig::baseline();
        let c = sample_sites(Stage::MultiplierOutput, None, 25, 0.001, &cfg, 42).unwrap();
        assert_eq!(c.specs.len(), 4);
        let distinct: BTreeSet<_> = c.specs.iter().map(|s| s.site).collect();
        assert_eq!(distinct.len(), 4);
        assert!(
            sample_sites(Stage::MultiplierOutput, None, 25, 0.0, &cfg, 1)
                .unwrap()
                .is_empty()
        );
        let all = sample_sites(Stage::MemoryCell, None, 12, 1.0, &cfg, 3).unwrap();
        assert_eq!(all.specs.len(), 128 * 32);
        assert_eq!(site_count(0.005, 4096), 20);
        assert_eq!(site_count(1e-9, 4096), 1);
        assert!(sample_sites(Stage::MemoryCell, None, 12, 1.5, &cfg, 3).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = CrossbarConfig::hardened();
        let a = sample_sites(Stage::AdderOutput, Some(1), 25, 0.01, &cfg, 9).unwrap();
        let b = sample_sites(Stage::AdderOutput, Some(1), 25, 0.01, &cfg, 9).unwrap();
        let c = sample_sites(Stage::AdderOutput, Some(1), 25, 0.01, &cfg, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.specs, c.specs);
        assert!(a.specs.iter().all(|s| s.site.level() == 1));
    }

    #[test]
    fn width_guard() {
        let cfg = CrossbarConfig::baseline();
        let site = FaultSite::MemoryCell { row: 0, col: 0 };
        assert!(FaultSpec::new(site, 12, &cfg).is_ok());
        assert!(FaultSpec::new(site, 13, &cfg).is_err());
        let add = FaultSite::AdderOutput {
            col: 0,
            level: 1,
            index: 0,
        };
        assert!(FaultSpec::new(add, 26, &cfg).is_ok());
        assert!(FaultSpec::new(add, 27, &cfg).is_err());
        let add7 = FaultSite::AdderOutput {
            col: 0,
            level: 7,
            index: 0,
        };
        assert!(FaultSpec::new(add7, 32, &cfg).is_ok());
        assert!(FaultSpec::new(FaultSite::InputOffset { row: 3 }, 4, &cfg).is_err());
        assert!(FaultSpec::new(FaultSite::NormalizedOutput { block: 0, col: 0 }, 15, &cfg).is_ok());
        assert!(
            FaultSpec::new(FaultSite::NormalizedOutput { block: 0, col: 0 }, 16, &cfg).is_err()
        );
        let post = CrossbarConfig::post_aligned();
        assert!(FaultSpec::new(FaultSite::WeightOffset { row: 0, col: 0 }, 1, &post).is_err());
    }

    #[test]
    fn unit_counts() {
        let b = CrossbarConfig::baseline();
        assert_eq!(Stage::MultiplierOutput.unit_count(&b, None), 4096);
        assert_eq!(Stage::InputExponent.unit_count(&b, None), 8);
        assert_eq!(Stage::AdderOutput.unit_count(&b, Some(1)), 2048);
        assert_eq!(Stage::AdderOutput.unit_count(&b, None), 127 * 32);
        assert_eq!(Stage::GlobalAlignExponent.unit_count(&b, None), 256);
        let h = CrossbarConfig::hardened();
        assert_eq!(Stage::AdderOutput.unit_count(&h, Some(1)), 2048);
        assert_eq!(Stage::NormalizedOutput.unit_count(&h, None), 16 * 32);
        for stage in Stage::ALL {
            if !stage.present_in(&b) {
                continue;
            }
            let n = stage.unit_count(&b, None);
            for i in [0, n / 2, n - 1] {
                FaultSpec::new(FaultSite::nth(stage, None, &b, i), 0, &b).unwrap();
            }
        }
    }

    #[test]
    fn campaign_text_roundtrip() {
        let cfg = CrossbarConfig::baseline();
        let c = sample_sites(Stage::AdderOutput, Some(3), 20, 0.01, &cfg, 5).unwrap();
        let back = FaultCampaign::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert!(FaultCampaign::parse("memory-cell 1,2 3\nmemory-cell 1,2 3\n").is_err());
        assert!(FaultCampaign::parse("memory-cell 1 3\n").is_err());
        let bare = FaultCampaign::parse("multiplier-output 4,5 25\n").unwrap();
        assert_eq!(bare.stage, Stage::MultiplierOutput);
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(x in 0u64..(1 << 33), bit in 0u32..33) {
            prop_assert_eq!(flip(flip(x, 33, bit).unwrap(), 33, bit).unwrap(), x);
        }
    }
}
