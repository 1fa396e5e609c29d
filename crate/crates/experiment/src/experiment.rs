//! Fault-sweep configurations, their result records and design comparisons.
//!
//! A configuration is a TOML table:
//!
//! ```toml
//! design = "pre"                 # preset name or path to a design file
//! model = "digits_mlp.fpcm"      # optional, relative to the config file
//! dataset = "digits_test.csv"    # optional, relative to the config file
//! stages = ["multiplier-output"]
//! levels = [1, 4]                # adder levels, required for adder stages
//! bits = [25, 20]
//! fractions = [0.0, 0.001]
//! seeds = [0, 1]
//! rounding = "truncate"          # optional override
//! precision = "bf16"             # optional override
//! samples = 100                  # optional dataset prefix
//! out = "results.csv"            # optional
//! ```
//!
//! A design file holds `base = "<preset>"` plus optional `precision`,
//! `rounding`, `alignment` ("pre" or "post"), `group` and `tiles`
//! (`[ic, oc, h, w]`, or `[]` for a monolithic array) overrides.
//!
//! Records are written as CSV with the columns of [`ExperimentRecord`] in
//! declaration order; `level` is empty for non-adder stages and
//! `median_layer_error` is a `;`-separated list.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fpcim::fault::{ber, sample_sites};
use fpcim::{CrossbarConfig, FaultCampaign, Format, Paradigm, Rounding, Stage, Stencil};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, Dataset};
use crate::error::{io_err, HarnessError, Result};
use crate::harness::Harness;
use crate::model::{load_model, LayerGraph};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    design: String,
    model: Option<PathBuf>,
    dataset: Option<PathBuf>,
    stages: Vec<String>,
    #[serde(default)]
    levels: Vec<u32>,
    bits: Vec<u32>,
    fractions: Vec<f64>,
    seeds: Vec<u64>,
    rounding: Option<String>,
    precision: Option<String>,
    samples: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    base: String,
    precision: Option<String>,
    rounding: Option<String>,
    alignment: Option<String>,
    group: Option<usize>,
    tiles: Option<Vec<usize>>,
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Resolves a preset name, or a design file when `name` names an existing
/// file.
pub fn resolve_design(name: &str) -> Result<CrossbarConfig> {
    let path = Path::new(name);
    if !path.is_file() {
        return Ok(CrossbarConfig::preset(name)?);
    }
    let file: DesignFile = toml::from_str(&read_text(path)?).map_err(config_err)?;
    let mut cfg = CrossbarConfig::preset(&file.base)?;
    if let Some(p) = &file.precision {
        cfg = cfg.with_precision(p.parse()?);
    }
    if let Some(r) = &file.rounding {
        cfg = cfg.with_rounding(r.parse()?);
    }
    let group = file.group.unwrap_or(cfg.paradigm.group_size());
    cfg.paradigm = match file.alignment.as_deref() {
        None if file.group.is_none() => cfg.paradigm,
        None if cfg.paradigm.is_pre() => Paradigm::PreAlignment { group },
        None | Some("post") => Paradigm::PostAlignment { local_group: group },
        Some("pre") => Paradigm::PreAlignment { group },
        Some(other) => return Err(config_err(format!("unknown alignment `{other}`"))),
    };
    match file.tiles.as_deref() {
        None => {}
        Some([]) => cfg.stencil = Stencil::Monolithic,
        Some(&[ic, oc, h, w]) => cfg.stencil = Stencil::Tiled { ic, oc, h, w },
        Some(other) => {
            return Err(config_err(format!(
                "tiles {other:?} must be [ic, oc, h, w]"
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A validated sweep over one design point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Name the design was given by, echoed in every record.
    pub design: String,
    pub crossbar: CrossbarConfig,
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub stages: Vec<Stage>,
    pub levels: Vec<u32>,
    pub bits: Vec<u32>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Overrides applied on top of the design.
    pub precision: Option<Format>,
    pub rounding: Option<Rounding>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
}

fn apply_overrides(
    mut cfg: CrossbarConfig,
    precision: Option<Format>,
    rounding: Option<Rounding>,
) -> CrossbarConfig {
    if let Some(p) = precision {
        cfg = cfg.with_precision(p);
    }
    if let Some(r) = rounding {
        cfg = cfg.with_rounding(r);
    }
    cfg
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub stage: Stage,
    pub level: Option<u32>,
    pub bit: u32,
    pub fraction: f64,
    pub seed: u64,
}

impl GridPoint {
    pub fn id(&self, design: &str) -> String {
        let level = self
            .level
            .map_or_else(|| "-".to_string(), |l| l.to_string());
        format!(
            "{design}/{}/{level}/{}/{}/{}",
            self.stage, self.bit, self.fraction, self.seed
        )
    }
}

impl ExperimentConfig {
    /// Parses a TOML configuration; relative paths resolve against
    /// `base_dir` and missing model or dataset paths fall back to the
    /// bundled ones.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
        let file: ConfigFile = toml::from_str(text).map_err(config_err)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        let design_path = resolve(PathBuf::from(&file.design));
        let design_name = if design_path.is_file() {
            design_path.display().to_string()
        } else {
            file.design.clone()
        };
        let precision = file
            .precision
            .as_deref()
            .map(str::parse::<Format>)
            .transpose()?;
        let rounding = file
            .rounding
            .as_deref()
            .map(str::parse::<Rounding>)
            .transpose()?;
        let crossbar = apply_overrides(resolve_design(&design_name)?, precision, rounding);
        let stages = file
            .stages
            .iter()
            .map(|s| s.parse::<Stage>())
            .collect::<fpcim::Result<Vec<_>>>()?;
        let cfg = ExperimentConfig {
            design: file.design,
            crossbar,
            model: file.model.map_or_else(crate::bundled_model, resolve),
            dataset: file.dataset.map_or_else(crate::bundled_dataset, resolve),
            stages,
            levels: file.levels,
            bits: file.bits,
            fractions: file.fractions,
            seeds: file.seeds,
            precision,
            rounding,
            samples: file.samples,
            out: file.out.map(resolve),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::from_toml(&read_text(path)?, base)
    }

    /// Replaces the design point, keeping the grid and the precision and
    /// rounding overrides.
    pub fn with_design(mut self, name: &str) -> Result<ExperimentConfig> {
        self.crossbar = apply_overrides(resolve_design(name)?, self.precision, self.rounding);
        self.design = name.to_string();
        self.validate()?;
        Ok(self)
    }

    /// Checks every grid point against the stage's bit width and presence.
    pub fn validate(&self) -> Result<()> {
        self.crossbar.validate()?;
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(config_err(format!("fraction {f} outside [0, 1]")));
        }
        if self.stages.contains(&Stage::AdderOutput) && self.levels.is_empty() {
            return Err(config_err("adder-output sweeps need a `levels` list"));
        }
        for &stage in &self.stages {
            if !stage.present_in(&self.crossbar) {
                return Err(config_err(format!(
                    "stage {stage} does not exist in {}",
                    self.crossbar
                )));
            }
            for level in self.stage_levels(stage) {
                let lv = level.unwrap_or(0);
                if level.is_some() && (lv == 0 || lv > self.crossbar.depth()) {
                    return Err(config_err(format!(
                        "adder level {lv} outside 1..={}",
                        self.crossbar.depth()
                    )));
                }
                let width = stage.width(&self.crossbar, lv);
                if let Some(b) = self.bits.iter().find(|&&b| b >= width) {
                    return Err(config_err(format!(
                        "bit {b} exceeds the {width}-bit output of {stage}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn stage_levels(&self, stage: Stage) -> Vec<Option<u32>> {
        if stage == Stage::AdderOutput {
            self.levels.iter().map(|&l| Some(l)).collect()
        } else {
            vec![None]
        }
    }

    /// Grid in output order: stage, level, bit, fraction, seed.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut points = Vec::new();
        for &stage in &self.stages {
            for level in self.stage_levels(stage) {
                for &bit in &self.bits {
                    for &fraction in &self.fractions {
                        for &seed in &self.seeds {
                            points.push(GridPoint {
                                stage,
                                level,
                                bit,
                                fraction,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        points
    }

    pub fn load_workload(&self) -> Result<(LayerGraph, Dataset)> {
        let model = load_model(&self.model)?;
        let mut dataset = load_dataset(&self.dataset)?;
        if let Some(n) = self.samples {
            dataset = dataset.truncated(n);
        }
        Ok((model, dataset))
    }
}

mod float_list {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        s.serialize_str(&parts.join(";"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(';')
            .map(|p| p.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_id: String,
    pub design: String,
    pub stage: String,
    pub level: Option<u32>,
    pub bit: u32,
    pub fraction: f64,
    /// Output width of the faulted stage.
    pub stage_bits: u32,
    pub ber: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    #[serde(with = "float_list")]
    pub median_layer_error: Vec<f64>,
    pub nonfinite: usize,
    pub wall_time_s: f64,
}

impl ExperimentRecord {
    /// Whether `ber` equals `fraction / stage_bits`.
    pub fn ber_consistent(&self) -> bool {
        self.stage_bits > 0 && self.ber == ber(self.fraction, self.stage_bits)
    }
}

pub fn write_records(writer: impl std::io::Write, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: "csv output".into(),
        source,
    })?;
    Ok(())
}

/// Reads records and rejects any whose BER disagrees with its fraction.
pub fn read_records(reader: impl std::io::Read) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (n, rec) in rdr.deserialize::<ExperimentRecord>().enumerate() {
        let rec = rec?;
        if !rec.ber_consistent() {
            return Err(HarnessError::Config(format!(
                "record {}: ber {} does not equal {} / {}",
                n + 1,
                rec.ber,
                rec.fraction,
                rec.stage_bits
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records_file(path: &Path) -> Result<Vec<ExperimentRecord>> {
    read_records(std::fs::File::open(path).map_err(io_err(path))?)
}

pub fn write_records_file(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    write_records(std::fs::File::create(path).map_err(io_err(path))?, records)
}

fn campaign(point: &GridPoint, config: &CrossbarConfig) -> Result<FaultCampaign> {
    Ok(sample_sites(
        point.stage,
        point.level,
        point.bit,
        point.fraction,
        config,
        point.seed,
    )?)
}

fn evaluate_point(harness: &Harness, design: &str, point: &GridPoint) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let cfg = harness.config();
    let result = harness.evaluate(&campaign(point, cfg)?)?;
    let stage_bits = point.stage.width(cfg, point.level.unwrap_or(0));
    Ok(ExperimentRecord {
        config_id: point.id(design),
        design: design.to_string(),
        stage: point.stage.to_string(),
        level: point.level,
        bit: point.bit,
        fraction: point.fraction,
        stage_bits,
        ber: ber(point.fraction, stage_bits),
        seed: point.seed,
        accuracy: result.accuracy,
        correct: result.correct,
        total: result.total,
        median_layer_error: result.layer_errors,
        nonfinite: result.nonfinite,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(config_err)
}

/// Evaluates every grid point not already present in `existing` (matched
/// by config id) and returns all records in grid order. `workers = 0`
/// uses one thread per core.
pub fn run(
    config: &ExperimentConfig,
    workers: usize,
    existing: &[ExperimentRecord],
) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let done: HashMap<&str, &ExperimentRecord> =
        existing.iter().map(|r| (r.config_id.as_str(), r)).collect();
    let grid = config.grid();
    let todo: Vec<&GridPoint> = grid
        .iter()
        .filter(|p| !done.contains_key(p.id(&config.design).as_str()))
        .collect();
    let mut fresh = HashMap::new();
    if !todo.is_empty() {
        let (model, dataset) = config.load_workload()?;
        let pool = pool(workers)?;
        let harness = pool.install(|| Harness::new(model, dataset, config.crossbar))?;
        let records = pool.install(|| {
            todo.par_iter()
                .map(|p| evaluate_point(&harness, &config.design, p))
                .collect::<Result<Vec<_>>>()
        })?;
        fresh = records
            .into_iter()
            .map(|r| (r.config_id.clone(), r))
            .collect();
    }
    Ok(grid
        .iter()
        .map(|p| {
            let id = p.id(&config.design);
            fresh
                .remove(&id)
                .unwrap_or_else(|| done[id.as_str()].clone())
        })
        .collect())
}

/// Runs the sweep against `out`, reusing records already stored there, and
/// rewrites the file in grid order.
pub fn run_to_file(
    config: &ExperimentConfig,
    out: &Path,
    workers: usize,
) -> Result<Vec<ExperimentRecord>> {
    let existing = if out.is_file() {
        read_records_file(out)?
    } else {
        Vec::new()
    };
    let records = run(config, workers, &existing)?;
    write_records_file(out, &records)?;
    Ok(records)
}

/// How many units a comparison scenario faults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultAmount {
    Fraction(f64),
    /// A fixed number of units regardless of the design's unit count.
    Sites(usize),
}

/// Fault scenario applied identically to every compared design.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub stage: Stage,
    pub level: Option<u32>,
    pub bit: u32,
    pub amount: FaultAmount,
    pub seeds: Vec<u64>,
}

impl Scenario {
    pub fn campaign(&self, config: &CrossbarConfig, seed: u64) -> Result<FaultCampaign> {
        let fraction = match self.amount {
            FaultAmount::Fraction(f) => f,
            FaultAmount::Sites(n) => n as f64 / self.stage.unit_count(config, self.level) as f64,
        };
        Ok(sample_sites(
            self.stage, self.level, self.bit, fraction, config, seed,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub design: String,
    pub baseline: f64,
    /// Mean faulted accuracy over the scenario's seeds.
    pub faulted: f64,
    pub drop: f64,
    /// This design's drop over the first design's; 1.0 when both are zero.
    pub drop_ratio: f64,
}

pub fn drop_ratio(drop: f64, reference: f64) -> f64 {
    if drop == reference {
        1.0
    } else {
        drop / reference
    }
}

/// Evaluates each design under the scenario. Designs must have equal MAC
/// counts so that fault fractions are commensurate.
pub fn compare(
    designs: &[(String, CrossbarConfig)],
    model: &LayerGraph,
    dataset: &Dataset,
    scenario: &Scenario,
) -> Result<Vec<ComparisonRow>> {
    let Some((_, first)) = designs.first() else {
        return Ok(Vec::new());
    };
    if let Some((name, cfg)) = designs
        .iter()
        .find(|(_, c)| c.total_macs() != first.total_macs())
    {
        return Err(config_err(format!(
            "design {name} has {} MACs, the reference has {}",
            cfg.total_macs(),
            first.total_macs()
        )));
    }
    let mut rows: Vec<ComparisonRow> = Vec::new();
    for (name, cfg) in designs {
        let harness = Harness::new(model.clone(), dataset.clone(), *cfg)?;
        let baseline = harness.baseline().accuracy;
        let (mut correct, mut total) = (0usize, 0usize);
        for &seed in &scenario.seeds {
            let r = harness.evaluate(&scenario.campaign(cfg, seed)?)?;
            correct += r.correct;
            total += r.total;
        }
        let faulted = if total == 0 {
            baseline
        } else {
            correct as f64 / total as f64
        };
        let drop = baseline - faulted;
        let reference = rows.first().map_or(drop, |r| r.drop);
        rows.push(ComparisonRow {
            design: name.clone(),
            baseline,
            faulted,
            drop,
            drop_ratio: drop_ratio(drop, reference),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
            design = "pre"
            stages = ["multiplier-output"]
            bits = [25, 24, 20, 10, 5]
            fractions = [0.0, 0.0005, 0.001]
            seeds = [3]
            "#,
            Path::new("."),
        )
        .unwrap()
    }

    #[test]
    fn grid_product() {
        let cfg = sample_config();
        let grid = cfg.grid();
        assert_eq!(grid.len(), 15);
        assert_eq!((grid[0].bit, grid[0].fraction), (25, 0.0));
        assert_eq!((grid[1].bit, grid[1].fraction), (25, 0.0005));
        assert_eq!(grid[3].bit, 24);
    }

    #[test]
    fn width_guard() {
        let err = |stage: &str, bits: &str, extra: &str| {
            let text = format!(
                "design = \"pre\"\nstages = [\"{stage}\"]\nbits = [{bits}]\nfractions = [0.1]\nseeds = [0]\n{extra}"
            );
            ExperimentConfig::from_toml(&text, Path::new("."))
                .unwrap_err()
                .to_string()
        };
        assert!(err("input-offset", "4", "").contains("4-bit"));
        assert!(err("multiplier-output", "26", "").contains("26-bit"));
        assert!(err("adder-output", "5", "").contains("levels"));
        assert!(err("adder-output", "5", "levels = [8]").contains("level 8"));
        assert!(err("global-align-offset", "1", "precision = \"int8\"").contains("does not exist"));
        let text = "design = \"pre\"\nstages = [\"memory-cell\"]\nbits = [1]\nfractions = [1.5]\nseeds = [0]";
        assert!(ExperimentConfig::from_toml(text, Path::new("."))
            .unwrap_err()
            .to_string()
            .contains("outside"));
    }

    #[test]
    fn ber_column() {
        let r = ExperimentRecord {
            config_id: "x".into(),
            design: "pre".into(),
            stage: "multiplier-output".into(),
            level: None,
            bit: 25,
            fraction: 0.001,
            stage_bits: 26,
            ber: ber(0.001, 26),
            seed: 0,
            accuracy: 0.5,
            correct: 1,
            total: 2,
            median_layer_error: vec![0.0, f64::INFINITY, 1e-3],
            nonfinite: 0,
            wall_time_s: 0.25,
        };
        assert!((r.ber - 3.846e-5).abs() < 5e-9);
        let mut buf = Vec::new();
        write_records(&mut buf, std::slice::from_ref(&r)).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), vec![r.clone()]);
        let bad = ExperimentRecord { ber: 1e-3, ..r };
        let mut buf = Vec::new();
        write_records(&mut buf, &[bad]).unwrap();
        assert!(read_records(buf.as_slice()).is_err());
    }

    #[test]
    fn ratios() {
        assert_eq!(drop_ratio(0.0, 0.0), 1.0);
        assert_eq!(drop_ratio(0.2, 0.2), 1.0);
        assert_eq!(drop_ratio(0.1, 0.4), 0.25);
    }

    #[test]
    fn design_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.toml");
        std::fs::write(
            &path,
            "base = \"pre\"\nalignment = \"post\"\ngroup = 4\ntiles = [8, 4, 16, 8]\n",
        )
        .unwrap();
        assert_eq!(
            resolve_design(path.to_str().unwrap()).unwrap(),
            CrossbarConfig::hardened()
        );
        std::fs::write(
            &path,
            "base = \"hardened\"\ntiles = []\nprecision = \"fp8\"\n",
        )
        .unwrap();
        let cfg = resolve_design(path.to_str().unwrap()).unwrap();
        assert_eq!(cfg.stencil, Stencil::Monolithic);
        assert_eq!(cfg.precision.format, Format::Fp8E4M3);
        std::fs::write(&path, "base = \"pre\"\ntiles = [3]\n").unwrap();
        assert!(resolve_design(path.to_str().unwrap()).is_err());
    }
}
