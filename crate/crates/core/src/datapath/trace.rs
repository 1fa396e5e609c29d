use std::fmt::{self, Write};

use crate::bits::to_raw;
use crate::fault::FaultSite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceStage {
    WeightExponent,
    WeightOffset,
    WeightCell,
    InputExponent,
    InputOffset,
    InputMantissa,
    Product,
    ProductExponent,
    AlignedProduct,
    LocalExponent,
    Adder,
    GlobalExponent,
    GlobalOffset,
    AlignedSum,
    FinalSum,
    ColumnExponent,
    Normalized,
    Output,
}

impl TraceStage {
    pub fn name(self) -> &'static str {
        match self {
            TraceStage::WeightExponent => "weight-exponent",
            TraceStage::WeightOffset => "weight-offset",
            TraceStage::WeightCell => "weight-cell",
            TraceStage::InputExponent => "input-exponent",
            TraceStage::InputOffset => "input-offset",
            TraceStage::InputMantissa => "input-mantissa",
            TraceStage::Product => "product",
            TraceStage::ProductExponent => "product-exponent",
            TraceStage::AlignedProduct => "aligned-product",
            TraceStage::LocalExponent => "local-exponent",
            TraceStage::Adder => "adder",
            TraceStage::GlobalExponent => "global-exponent",
            TraceStage::GlobalOffset => "global-offset",
            TraceStage::AlignedSum => "aligned-sum",
            TraceStage::FinalSum => "final-sum",
            TraceStage::ColumnExponent => "column-exponent",
            TraceStage::Normalized => "normalized",
            TraceStage::Output => "output",
        }
    }
}

/// One recorded datapath value. Coordinates follow the fault-site
/// conventions of the stage (row, col, level, group index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub stage: TraceStage,
    pub coords: Vec<usize>,
    pub width: u32,
    pub value: i64,
}

/// Every value computed by one programming or evaluation, plus each
/// corrupted unit invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PipelineTrace {
    pub entries: Vec<TraceEntry>,
    pub fault_hits: Vec<FaultSite>,
}

impl PipelineTrace {
    pub fn new() -> PipelineTrace {
        PipelineTrace::default()
    }

    pub fn find(&self, stage: TraceStage, coords: &[usize]) -> Option<&TraceEntry> {
        self.entries
            .iter()
            .find(|e| e.stage == stage && e.coords == coords)
    }

    pub fn value(&self, stage: TraceStage, coords: &[usize]) -> Option<i64> {
        self.find(stage, coords).map(|e| e.value)
    }

    pub fn of_stage(&self, stage: TraceStage) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(move |e| e.stage == stage)
    }

    pub fn hits_at(&self, site: &FaultSite) -> usize {
        self.fault_hits.iter().filter(|s| *s == site).count()
    }

    /// Line-oriented dump: `stage coords width hex`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{e}");
        }
        out
    }
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let coords: Vec<String> = self.coords.iter().map(|c| c.to_string()).collect();
        let digits = self.width.div_ceil(4) as usize;
        write!(
            f,
            "{} {} {} 0x{:0digits$x}",
            self.stage.name(),
            if coords.is_empty() {
                "-".to_string()
            } else {
                coords.join(",")
            },
            self.width,
            to_raw(self.value, self.width),
        )
    }
}

/// Optional sink threaded through the pipeline.
pub(crate) struct Recorder<'a>(pub Option<&'a mut PipelineTrace>);

impl Recorder<'_> {
    pub fn none() -> Recorder<'static> {
        Recorder(None)
    }

    pub fn enabled(&self) -> bool {
        self.0.is_some()
    }

    pub fn record(&mut self, stage: TraceStage, coords: &[usize], width: u32, value: i64) {
        if let Some(t) = self.0.as_deref_mut() {
            t.entries.push(TraceEntry {
                stage,
                coords: coords.to_vec(),
                width,
                value,
            });
        }
    }

    pub fn hit(&mut self, mask: u64, site: impl FnOnce() -> FaultSite) {
        if mask != 0 {
            if let Some(t) = self.0.as_deref_mut() {
                t.fault_hits.push(site());
            }
        }
    }

    pub fn reborrow(&mut self) -> Recorder<'_> {
        Recorder(self.0.as_deref_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_format() {
        let mut t = PipelineTrace::new();
        let mut r = Recorder(Some(&mut t));
        r.record(TraceStage::Product, &[3, 1], 26, -(1 << 22));
        r.record(TraceStage::Output, &[1], 16, 0x3F80);
        assert_eq!(t.dump(), "product 3,1 26 0x3c00000\noutput 1 16 0x3f80\n");
    }
}
