//! The crossbar matrix-vector pipeline.
//!
//! Weights are programmed once into memory cells (`program_weights`), then
//! each input vector flows through input alignment, in-memory multiplication,
//! one adder tree per column (or per tile column), mid-tree global alignment
//! and normalization. Tiled stencils merge their per-tile words exactly and
//! round once.

mod merge;
mod trace;
mod tree;

use std::sync::Arc;

pub use merge::merge_words;
pub use trace::{PipelineTrace, TraceEntry, TraceStage};
pub use tree::{normalize, reduce_column};

use crate::align::{saturating_offset, GroupExponent};
use crate::bits::fits_signed;
use crate::codec::{
    alignment_exponent, decode, padded_mantissa, to_signed, PrecisionSpec, SignedMantissa,
};
use crate::config::{CrossbarConfig, Paradigm};
use crate::error::{Error, Result};
use crate::fault::{apply_signed, FaultSet, FaultSite};
use trace::Recorder;

/// Weights of one crossbar column as stored in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgrammedColumn {
    /// Stored operands, with memory-cell faults already applied.
    pub cells: Vec<SignedMantissa>,
    /// Pre-alignment: the (possibly faulty) maximum exponent of each weight
    /// group. Empty otherwise.
    pub group_exponents: Vec<u32>,
    /// Alignment exponent of every stored weight; used by post-alignment.
    pub cell_exponents: Vec<u32>,
    pub words: Vec<u16>,
}

/// A crossbar with its weights programmed under a fixed fault set.
#[derive(Debug, Clone)]
pub struct ProgrammedCrossbar {
    config: CrossbarConfig,
    columns: Vec<ProgrammedColumn>,
    faults: Arc<FaultSet>,
}

/// Exact two's-complement product; always fits `product_width` bits.
pub fn multiply(a: SignedMantissa, w: SignedMantissa, spec: &PrecisionSpec) -> i64 {
    let p = a.0 * w.0;
    assert!(
        fits_signed(p, spec.product_width),
        "product {p} overflows {} bits",
        spec.product_width
    );
    p
}

fn int8_operand(word: u16) -> SignedMantissa {
    SignedMantissa(i64::from(word as u8 as i8))
}

/// Programs an `ic x oc` row-major weight matrix into memory cells.
pub fn program_weights(
    weights: &[u16],
    config: &CrossbarConfig,
    faults: &FaultSet,
    trace: Option<&mut PipelineTrace>,
) -> Result<Vec<ProgrammedColumn>> {
    config.validate()?;
    let (ic, oc) = (config.ic, config.oc);
    if weights.len() != ic * oc {
        return Err(Error::Dimension(format!(
            "weight matrix has {} entries, crossbar holds {ic}x{oc}",
            weights.len()
        )));
    }
    let mut rec = Recorder(trace);
    let spec = config.precision;
    let ow = spec.operand_width;
    let mut columns = Vec::with_capacity(oc);
    for col in 0..oc {
        let words: Vec<u16> = (0..ic).map(|r| weights[r * oc + col]).collect();
        let mut cells = Vec::with_capacity(ic);
        let mut group_exponents = Vec::new();
        let mut cell_exponents = vec![0; ic];
        if !spec.is_float() {
            cells.extend(words.iter().map(|&w| int8_operand(w)));
        } else {
            let comps: Vec<_> = words.iter().map(|&w| decode(w, &spec)).collect();
            let mut mags = Vec::with_capacity(ic);
            for (r, c) in comps.iter().enumerate() {
                let m = padded_mantissa(c, &spec).map_err(|_| {
                    Error::NonFinite(format!("weight ({r},{col}) = {:#06x}", words[r]))
                })?;
                mags.push(to_signed(m, c.sign, &spec));
                cell_exponents[r] = alignment_exponent(c);
            }
            match config.paradigm {
                Paradigm::PreAlignment { group } => {
                    for (k, rows) in (0..ic).collect::<Vec<_>>().chunks(group).enumerate() {
                        let true_max = rows.iter().map(|&r| cell_exponents[r]).max().unwrap_or(0);
                        let fm = faults.weight_exponent(k, col);
                        rec.hit(fm, || FaultSite::WeightExponent { group: k, col });
                        let max = true_max ^ fm as u32;
                        rec.record(
                            TraceStage::WeightExponent,
                            &[k, col],
                            spec.exp_bits,
                            i64::from(max),
                        );
                        group_exponents.push(max);
                        for &r in rows {
                            let om = faults.weight_offset(r, col);
                            rec.hit(om, || FaultSite::WeightOffset { row: r, col });
                            let off = saturating_offset(max, cell_exponents[r]) ^ om as u32;
                            rec.record(TraceStage::WeightOffset, &[r, col], 4, i64::from(off));
                            cells.push(SignedMantissa(mags[r].0 >> off));
                        }
                    }
                }
                Paradigm::PostAlignment { .. } => cells = mags,
            }
        }
        for (r, cell) in cells.iter_mut().enumerate() {
            let mask = faults.memory(r, col);
            rec.hit(mask, || FaultSite::MemoryCell { row: r, col });
            cell.0 = apply_signed(cell.0, ow, mask);
            rec.record(TraceStage::WeightCell, &[r, col], ow, cell.0);
        }
        columns.push(ProgrammedColumn {
            cells,
            group_exponents,
            cell_exponents,
            words,
        });
    }
    Ok(columns)
}

/// Input operands after the (shared) input alignment stage.
struct AlignedInputs {
    mantissas: Vec<SignedMantissa>,
    /// Pre-alignment: per-group maximum exponent. Post: per-row exponent.
    exponents: Vec<u32>,
}

fn align_inputs(
    inputs: &[u16],
    config: &CrossbarConfig,
    faults: &FaultSet,
    rec: &mut Recorder<'_>,
) -> Result<AlignedInputs> {
    let spec = config.precision;
    let mut mags = Vec::with_capacity(inputs.len());
    let mut exps = Vec::with_capacity(inputs.len());
    for (r, &w) in inputs.iter().enumerate() {
        let c = decode(w, &spec);
        let m = padded_mantissa(&c, &spec)
            .map_err(|_| Error::NonFinite(format!("input {r} = {w:#06x}")))?;
        mags.push(to_signed(m, c.sign, &spec));
        exps.push(alignment_exponent(&c));
    }
    let out = match config.paradigm {
        Paradigm::PreAlignment { group } => {
            let mut mantissas = Vec::with_capacity(inputs.len());
            let mut group_max = Vec::with_capacity(inputs.len() / group);
            for k in 0..inputs.len() / group {
                let rows = k * group..(k + 1) * group;
                let fm = faults.input_exponent(k);
                rec.hit(fm, || FaultSite::InputExponent { group: k });
                let max = exps[rows.clone()].iter().copied().max().unwrap_or(0) ^ fm as u32;
                rec.record(
                    TraceStage::InputExponent,
                    &[k],
                    spec.exp_bits,
                    i64::from(max),
                );
                group_max.push(max);
                for r in rows {
                    let om = faults.input_offset(r);
                    rec.hit(om, || FaultSite::InputOffset { row: r });
                    let off = saturating_offset(max, exps[r]) ^ om as u32;
                    rec.record(TraceStage::InputOffset, &[r], 4, i64::from(off));
                    mantissas.push(SignedMantissa(mags[r].0 >> off));
                }
            }
            AlignedInputs {
                mantissas,
                exponents: group_max,
            }
        }
        Paradigm::PostAlignment { .. } => AlignedInputs {
            mantissas: mags,
            exponents: exps,
        },
    };
    if rec.enabled() {
        for (r, m) in out.mantissas.iter().enumerate() {
            rec.record(TraceStage::InputMantissa, &[r], spec.operand_width, m.0);
        }
    }
    Ok(out)
}

impl ProgrammedCrossbar {
    pub fn program(weights: &[u16], config: CrossbarConfig, faults: Arc<FaultSet>) -> Result<Self> {
        let columns = program_weights(weights, &config, &faults, None)?;
        Ok(ProgrammedCrossbar {
            config,
            columns,
            faults,
        })
    }

    pub fn program_traced(
        weights: &[u16],
        config: CrossbarConfig,
        faults: Arc<FaultSet>,
        trace: &mut PipelineTrace,
    ) -> Result<Self> {
        let columns = program_weights(weights, &config, &faults, Some(trace))?;
        Ok(ProgrammedCrossbar {
            config,
            columns,
            faults,
        })
    }

    pub fn config(&self) -> &CrossbarConfig {
        &self.config
    }

    pub fn columns(&self) -> &[ProgrammedColumn] {
        &self.columns
    }

    pub fn faults(&self) -> &FaultSet {
        &self.faults
    }

    pub fn matvec(&self, inputs: &[u16]) -> Result<Vec<u16>> {
        crossbar_matvec(inputs, self, None)
    }

    pub fn matvec_traced(&self, inputs: &[u16], trace: &mut PipelineTrace) -> Result<Vec<u16>> {
        crossbar_matvec(inputs, self, Some(trace))
    }

    pub fn int8_matvec(&self, inputs: &[i8]) -> Result<Vec<i64>> {
        int8_eval(inputs, self, &mut Recorder::none())
    }

    pub fn int8_matvec_traced(&self, inputs: &[i8], trace: &mut PipelineTrace) -> Result<Vec<i64>> {
        int8_eval(inputs, self, &mut Recorder(Some(trace)))
    }
}

/// Products of one tile column with their multiplier faults applied.
fn column_products(
    a: &[SignedMantissa],
    col: &ProgrammedColumn,
    col_idx: usize,
    rows: std::ops::Range<usize>,
    spec: &PrecisionSpec,
    faults: &FaultSet,
    rec: &mut Recorder<'_>,
) -> Vec<i64> {
    rows.map(|r| {
        let mask = faults.multiplier(r, col_idx);
        rec.hit(mask, || FaultSite::MultiplierOutput {
            row: r,
            col: col_idx,
        });
        let p = apply_signed(multiply(a[r], col.cells[r], spec), spec.product_width, mask);
        rec.record(TraceStage::Product, &[r, col_idx], spec.product_width, p);
        p
    })
    .collect()
}

/// Evaluates a programmed floating-point crossbar for one input vector.
pub fn crossbar_matvec(
    inputs: &[u16],
    programmed: &ProgrammedCrossbar,
    trace: Option<&mut PipelineTrace>,
) -> Result<Vec<u16>> {
    let config = &programmed.config;
    let spec = config.precision;
    if !spec.is_float() {
        return Err(Error::Config(
            "INT8 crossbars are evaluated with int8_matvec".into(),
        ));
    }
    if inputs.len() != config.ic {
        return Err(Error::Dimension(format!(
            "input vector has {} entries, crossbar has {} rows",
            inputs.len(),
            config.ic
        )));
    }
    let faults = &*programmed.faults;
    let mut rec = Recorder(trace);
    let aligned = align_inputs(inputs, config, faults, &mut rec)?;
    let tree_rows = config.tree_rows();
    let blocks = config.row_blocks();
    let mut outputs = Vec::with_capacity(config.oc);
    for (c, col) in programmed.columns.iter().enumerate() {
        let mut words = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let rows = b * tree_rows..(b + 1) * tree_rows;
            let products = column_products(
                &aligned.mantissas,
                col,
                c,
                rows.clone(),
                &spec,
                faults,
                &mut rec,
            );
            let (products, group_exps) = match config.paradigm {
                Paradigm::PreAlignment { group } => {
                    let exps = (rows.start / group..rows.end / group)
                        .map(|k| {
                            GroupExponent::from_pair(
                                aligned.exponents[k],
                                col.group_exponents[k],
                                &spec,
                            )
                        })
                        .collect();
                    (products, exps)
                }
                Paradigm::PostAlignment { local_group } => {
                    let pexps: Vec<GroupExponent> = rows
                        .clone()
                        .map(|r| {
                            GroupExponent::from_pair(
                                aligned.exponents[r],
                                col.cell_exponents[r],
                                &spec,
                            )
                        })
                        .collect();
                    if rec.enabled() {
                        for (r, e) in rows.clone().zip(&pexps) {
                            rec.record(
                                TraceStage::ProductExponent,
                                &[r, c],
                                spec.exp_bits,
                                i64::from(e.0),
                            );
                        }
                    }
                    let (aligned_p, exps) =
                        crate::align::local_align_products(&products, &pexps, local_group);
                    if rec.enabled() {
                        for (r, p) in rows.clone().zip(&aligned_p) {
                            rec.record(TraceStage::AlignedProduct, &[r, c], spec.product_width, *p);
                        }
                        for (i, e) in exps.iter().enumerate() {
                            rec.record(
                                TraceStage::LocalExponent,
                                &[c, rows.start / local_group + i],
                                spec.exp_bits,
                                i64::from(e.0),
                            );
                        }
                    }
                    (aligned_p, exps)
                }
            };
            let (sum, col_exp) = tree::reduce(
                &products,
                &group_exps,
                c,
                rows.start,
                config,
                faults,
                &mut rec.reborrow(),
            );
            rec.record(TraceStage::FinalSum, &[b, c], config.final_width(), sum);
            rec.record(
                TraceStage::ColumnExponent,
                &[b, c],
                spec.exp_bits,
                i64::from(col_exp.0),
            );
            let word = normalize(sum, col_exp, config);
            let mask = faults.normalized(b, c);
            rec.hit(mask, || FaultSite::NormalizedOutput { block: b, col: c });
            let word = word ^ mask as u16;
            rec.record(
                TraceStage::Normalized,
                &[b, c],
                spec.word_bits(),
                i64::from(word),
            );
            words.push(word);
        }
        let out = if blocks == 1 {
            words[0]
        } else {
            merge_words(&words, config.rounding, &spec)
        };
        rec.record(TraceStage::Output, &[c], spec.word_bits(), i64::from(out));
        outputs.push(out);
    }
    Ok(outputs)
}

/// Programs `weights` onto a tiled crossbar and evaluates one input vector.
pub fn tiled_matvec(
    inputs: &[u16],
    weights: &[u16],
    config: &CrossbarConfig,
    faults: Arc<FaultSet>,
) -> Result<Vec<u16>> {
    if !config.is_tiled() {
        return Err(Error::Config(format!("{config} is not a tiled stencil")));
    }
    ProgrammedCrossbar::program(weights, *config, faults)?.matvec(inputs)
}

fn int8_eval(
    inputs: &[i8],
    programmed: &ProgrammedCrossbar,
    rec: &mut Recorder<'_>,
) -> Result<Vec<i64>> {
    let config = &programmed.config;
    let spec = config.precision;
    if spec.is_float() {
        return Err(Error::Config(
            "floating-point crossbars are evaluated with crossbar_matvec".into(),
        ));
    }
    if inputs.len() != config.ic {
        return Err(Error::Dimension(format!(
            "input vector has {} entries, crossbar has {} rows",
            inputs.len(),
            config.ic
        )));
    }
    let a: Vec<SignedMantissa> = inputs
        .iter()
        .map(|&x| SignedMantissa(i64::from(x)))
        .collect();
    let faults = &*programmed.faults;
    let tree_rows = config.tree_rows();
    let mut outputs = Vec::with_capacity(config.oc);
    for (c, col) in programmed.columns.iter().enumerate() {
        let mut total = 0i64;
        for b in 0..config.row_blocks() {
            let rows = b * tree_rows..(b + 1) * tree_rows;
            let products = column_products(&a, col, c, rows.clone(), &spec, faults, rec);
            let (sum, _) = tree::reduce(
                &products,
                &[],
                c,
                rows.start,
                config,
                faults,
                &mut rec.reborrow(),
            );
            rec.record(TraceStage::FinalSum, &[b, c], config.final_width(), sum);
            total += sum;
        }
        rec.record(TraceStage::Output, &[c], 64, total);
        outputs.push(total);
    }
    Ok(outputs)
}

/// Programs signed 8-bit weights and evaluates one signed 8-bit input vector.
pub fn int8_matvec(
    inputs: &[i8],
    weights: &[i8],
    config: &CrossbarConfig,
    faults: Arc<FaultSet>,
) -> Result<Vec<i64>> {
    let words: Vec<u16> = weights.iter().map(|&w| u16::from(w as u8)).collect();
    ProgrammedCrossbar::program(&words, *config, faults)?.int8_matvec(inputs)
}

/// Encodes signed 8-bit values as crossbar words.
pub fn int8_words(values: &[i8]) -> Vec<u16> {
    values.iter().map(|&w| u16::from(w as u8)).collect()
}
