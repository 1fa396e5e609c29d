//! Command-line driver for fault sweeps, design comparisons, pipeline
//! traces and fault campaign files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use fpcim::codec::{from_f64, Rounding};
use fpcim::datapath::int8_words;
use fpcim::fault::{ber, sample_sites};
use fpcim::{FaultCampaign, FaultSet, FaultSpec, Format, PipelineTrace, ProgrammedCrossbar, Stage};
use fpcim_experiment::experiment::{
    compare, resolve_design, run_to_file, write_records, ExperimentConfig, FaultAmount, Scenario,
};
use fpcim_experiment::{load_dataset, load_model, HarnessError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "fpcim",
    version,
    about = "Fault experiments on a simulated floating-point CiM crossbar"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Run(RunArgs),
    /// Run a sweep described entirely by flags.
    Sweep(SweepArgs),
    /// Compare design points under one fault scenario.
    Compare(CompareArgs),
    /// Dump the pipeline trace of one seeded matrix-vector product.
    Trace(TraceArgs),
    /// Generate or inspect fault campaign files.
    #[command(subcommand)]
    Campaign(CampaignCommand),
}

#[derive(Args)]
struct Workload {
    /// Model file; defaults to the bundled digit classifier.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset CSV; defaults to the bundled test split.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Evaluate only the first N samples.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output CSV; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Preset name or design file replacing the config's design.
    #[arg(long)]
    design: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "pre")]
    design: String,
    #[arg(long, value_delimiter = ',', required = true)]
    stages: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    levels: Vec<u32>,
    #[arg(long, value_delimiter = ',', required = true)]
    bits: Vec<u32>,
    #[arg(long, value_delimiter = ',', required = true)]
    fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    rounding: Option<String>,
    #[command(flatten)]
    workload: Workload,
    /// Output CSV; records go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Design points; the first is the reference for drop ratios.
    #[arg(long, value_delimiter = ',', default_value = "pre,tiled-noga,hardened")]
    designs: Vec<String>,
    #[arg(long)]
    stage: String,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    bit: u32,
    /// Fraction of the stage's units to fault.
    #[arg(long, conflicts_with = "sites")]
    fraction: Option<f64>,
    /// Exact number of units to fault in every design.
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[command(flatten)]
    workload: Workload,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long, default_value = "pre")]
    design: String,
    /// Seed for the random operands.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// A fault as `stage coords bit`; repeatable.
    #[arg(long = "fault")]
    faults: Vec<String>,
    /// Campaign file whose faults are applied.
    #[arg(long)]
    campaign: Option<PathBuf>,
    /// Output file; the trace goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CampaignCommand {
    /// Sample a campaign and write it as text.
    Generate {
        #[arg(long, default_value = "pre")]
        design: String,
        #[arg(long)]
        stage: String,
        #[arg(long)]
        level: Option<u32>,
        #[arg(long)]
        bit: u32,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a campaign file against a design and summarize it.
    Inspect {
        path: PathBuf,
        #[arg(long, default_value = "pre")]
        design: String,
    },
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(HarnessError::Io {
                path: "stdout".into(),
                source: e,
            }),
            _ => Ok(()),
        },
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(design) = &args.design {
        cfg = cfg.with_design(design)?;
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| config_err("no output path: pass --out or set `out` in the config"))?;
    let records = run_to_file(&cfg, &out, args.workers)?;
    eprintln!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn toml_list<T: std::fmt::Display>(values: &[T]) -> String {
    let items: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn toml_path(p: &Path) -> String {
    toml_str(&p.display().to_string())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    // Builds the same TOML a config file would hold so both paths share
    // validation.
    let mut text = format!(
        "design = {}\nstages = [{}]\nlevels = {}\nbits = {}\nfractions = {}\nseeds = {}\n",
        toml_str(&args.design),
        args.stages
            .iter()
            .map(|s| toml_str(s))
            .collect::<Vec<_>>()
            .join(", "),
        toml_list(&args.levels),
        toml_list(&args.bits),
        toml_list(
            &args
                .fractions
                .iter()
                .map(|f| format!("{f:?}"))
                .collect::<Vec<_>>()
        ),
        toml_list(&args.seeds),
    );
    for (key, value) in [("precision", &args.precision), ("rounding", &args.rounding)] {
        if let Some(v) = value {
            text.push_str(&format!("{key} = {}\n", toml_str(v)));
        }
    }
    if let Some(m) = &args.workload.model {
        text.push_str(&format!("model = {}\n", toml_path(m)));
    }
    if let Some(d) = &args.workload.dataset {
        text.push_str(&format!("dataset = {}\n", toml_path(d)));
    }
    if let Some(n) = args.workload.samples {
        text.push_str(&format!("samples = {n}\n"));
    }
    let cfg = ExperimentConfig::from_toml(&text, Path::new("."))?;
    match &args.out {
        Some(out) => {
            let records = run_to_file(&cfg, out, args.workers)?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
        }
        None => {
            let records = fpcim_experiment::experiment::run(&cfg, args.workers, &[])?;
            write_records(std::io::stdout().lock(), &records)?;
        }
    }
    Ok(())
}

fn load_workload(
    w: &Workload,
) -> Result<(fpcim_experiment::LayerGraph, fpcim_experiment::Dataset)> {
    let model = load_model(
        &w.model
            .clone()
            .unwrap_or_else(fpcim_experiment::bundled_model),
    )?;
    let mut dataset = load_dataset(
        &w.dataset
            .clone()
            .unwrap_or_else(fpcim_experiment::bundled_dataset),
    )?;
    if let Some(n) = w.samples {
        dataset = dataset.truncated(n);
    }
    Ok((model, dataset))
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let amount = match (args.fraction, args.sites) {
        (Some(f), None) => FaultAmount::Fraction(f),
        (None, Some(n)) => FaultAmount::Sites(n),
        (None, None) => FaultAmount::Sites(1),
        (Some(_), Some(_)) => unreachable!("clap rejects --fraction with --sites"),
    };
    let scenario = Scenario {
        stage: args.stage.parse()?,
        level: args.level,
        bit: args.bit,
        amount,
        seeds: args.seeds,
    };
    let designs = args
        .designs
        .iter()
        .map(|d| Ok((d.clone(), resolve_design(d)?)))
        .collect::<Result<Vec<_>>>()?;
    let (model, dataset) = load_workload(&args.workload)?;
    let rows = compare(&designs, &model, &dataset, &scenario)?;
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["design", "baseline", "faulted", "drop", "drop_ratio"])?;
    for r in rows {
        w.write_record([
            r.design,
            r.baseline.to_string(),
            r.faulted.to_string(),
            r.drop.to_string(),
            r.drop_ratio.to_string(),
        ])?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: "stdout".into(),
        source,
    })?;
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> Result<()> {
    let cfg = resolve_design(&args.design)?;
    let mut specs: Vec<FaultSpec> = args
        .faults
        .iter()
        .map(|f| f.parse::<FaultSpec>())
        .collect::<fpcim::Result<_>>()?;
    if let Some(path) = &args.campaign {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        specs.extend(FaultCampaign::parse(&text)?.specs);
    }
    let faults = Arc::new(FaultSet::new(&specs, &cfg)?);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut trace = PipelineTrace::new();
    if cfg.precision.format == Format::Int8 {
        let x: Vec<i8> = (0..cfg.ic).map(|_| rng.gen()).collect();
        let w: Vec<i8> = (0..cfg.ic * cfg.oc).map(|_| rng.gen()).collect();
        let xbar = ProgrammedCrossbar::program_traced(&int8_words(&w), cfg, faults, &mut trace)?;
        xbar.int8_matvec_traced(&x, &mut trace)?;
    } else {
        let mut word = || {
            let v: f64 = (0..4).map(|_| rng.gen::<f64>() - 0.5).sum();
            from_f64(v, Rounding::RoundNearestEven, &cfg.precision)
        };
        let x: Vec<u16> = (0..cfg.ic).map(|_| word()).collect();
        let w: Vec<u16> = (0..cfg.ic * cfg.oc).map(|_| word()).collect();
        let xbar = ProgrammedCrossbar::program_traced(&w, cfg, faults, &mut trace)?;
        xbar.matvec_traced(&x, &mut trace)?;
    }
    let mut text = format!("# design {} ({cfg}) seed {}\n", args.design, args.seed);
    for s in &specs {
        text.push_str(&format!("# fault {s} hits {}\n", trace.hits_at(&s.site)));
    }
    text.push_str(&trace.dump());
    write_output(args.out.as_deref(), &text)
}

fn cmd_campaign(cmd: CampaignCommand) -> Result<()> {
    match cmd {
        CampaignCommand::Generate {
            design,
            stage,
            level,
            bit,
            fraction,
            seed,
            out,
        } => {
            let cfg = resolve_design(&design)?;
            let stage: Stage = stage.parse()?;
            let campaign = sample_sites(stage, level, bit, fraction, &cfg, seed)?;
            write_output(out.as_deref(), &campaign.to_text())
        }
        CampaignCommand::Inspect { path, design } => {
            let cfg = resolve_design(&design)?;
            let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let campaign = FaultCampaign::parse(&text)?;
            campaign.fault_set(&cfg)?;
            let units = campaign.stage.unit_count(&cfg, campaign.level);
            let width = campaign.stage.width(&cfg, campaign.level.unwrap_or(1));
            let fraction = campaign.specs.len() as f64 / units as f64;
            println!("design    {design} ({cfg})");
            println!("stage     {}", campaign.stage);
            if let Some(l) = campaign.level {
                println!("level     {l}");
            }
            println!("bit       {}", campaign.bit);
            println!("faults    {} of {units} units", campaign.specs.len());
            println!("fraction  {fraction}");
            println!("ber       {}", ber(fraction, width));
            println!("seed      {}", campaign.seed);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Campaign(c) => cmd_campaign(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fpcim: error: {e}");
            ExitCode::FAILURE
        }
    }
}
