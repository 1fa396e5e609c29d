//! Runs layer graphs through the simulated crossbar and scores them.

use std::sync::Arc;

use fpcim::codec::{from_f64, to_f64, Rounding};
use fpcim::datapath::{int8_words, merge_words};
use fpcim::oracle::exact::{exact_dot, word_value};
use fpcim::{
    CrossbarConfig, FaultCampaign, FaultSet, FaultSpec, PrecisionSpec, ProgrammedCrossbar,
};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};
use crate::mapping::{map_layer, TilingPlan};
use crate::model::{Conv2d, Dense, Layer, LayerGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyResult {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Per matrix layer, the median relative absolute deviation of its
    /// outputs from the fault-free run.
    pub layer_errors: Vec<f64>,
    /// Samples whose activations or logits became NaN or infinite.
    pub nonfinite: usize,
}

/// Activations between layers: encoded words for floating-point crossbars,
/// dequantized reals for INT8.
#[derive(Debug, Clone)]
enum Act {
    Words(Vec<u16>),
    Reals(Vec<f64>),
}

/// One matrix layer programmed block by block onto the crossbar.
struct MatrixStage {
    plan: TilingPlan,
    /// `[row block][column block]`.
    blocks: Vec<Vec<ProgrammedCrossbar>>,
    bias_words: Vec<u16>,
    bias: Vec<f64>,
    weight_scale: f64,
}

#[derive(Debug, Clone)]
struct SampleOutcome {
    prediction: Option<usize>,
    /// Outputs of every matrix layer the sample reached.
    layers: Vec<Vec<f64>>,
    nonfinite: bool,
}

/// Symmetric per-tensor INT8 scale.
fn int8_scale(values: impl Iterator<Item = f64>) -> f64 {
    let max = values.fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        max / 127.0
    } else {
        1.0
    }
}

fn quantize(v: f64, scale: f64) -> i8 {
    (v / scale).round().clamp(-127.0, 127.0) as i8
}

fn bf16_value(w: u16) -> f64 {
    to_f64(w, &PrecisionSpec::BF16)
}

pub struct Harness {
    config: CrossbarConfig,
    model: LayerGraph,
    dataset: Dataset,
    clean: Vec<SampleOutcome>,
    baseline: AccuracyResult,
}

impl Harness {
    /// Validates the pairing and runs the fault-free reference pass.
    pub fn new(model: LayerGraph, dataset: Dataset, config: CrossbarConfig) -> Result<Harness> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(HarnessError::Dataset("dataset is empty".into()));
        }
        if dataset.width() != model.input_width() {
            return Err(HarnessError::Shape(format!(
                "dataset has {} features, model expects {}",
                dataset.width(),
                model.input_width()
            )));
        }
        if let Some(l) = dataset.labels.iter().find(|&&l| l >= model.classes()) {
            return Err(HarnessError::Dataset(format!(
                "label {l} exceeds the model's {} classes",
                model.classes()
            )));
        }
        let mut h = Harness {
            config,
            model,
            dataset,
            clean: Vec::new(),
            baseline: AccuracyResult {
                correct: 0,
                total: 0,
                accuracy: 0.0,
                layer_errors: Vec::new(),
                nonfinite: 0,
            },
        };
        h.clean = h.run(&Arc::new(FaultSet::empty()), None)?;
        h.baseline = h.score(&h.clean);
        Ok(h)
    }

    pub fn config(&self) -> &CrossbarConfig {
        &self.config
    }

    pub fn model(&self) -> &LayerGraph {
        &self.model
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Fault-free accuracy on the simulated crossbar.
    pub fn baseline(&self) -> &AccuracyResult {
        &self.baseline
    }

    pub fn evaluate(&self, campaign: &FaultCampaign) -> Result<AccuracyResult> {
        self.evaluate_faults(&campaign.specs)
    }

    pub fn evaluate_faults(&self, faults: &[FaultSpec]) -> Result<AccuracyResult> {
        if faults.is_empty() {
            return Ok(self.baseline.clone());
        }
        let set = Arc::new(FaultSet::new(faults, &self.config)?);
        let outcomes = self.run(&set, None)?;
        Ok(self.score(&outcomes))
    }

    /// Like [`Harness::evaluate_faults`], but only the crossbars holding
    /// matrix layer `layer` (counted from 0) carry the faults.
    pub fn evaluate_layer_faults(
        &self,
        faults: &[FaultSpec],
        layer: usize,
    ) -> Result<AccuracyResult> {
        let layers = self.model.dense_layers().count();
        if layer >= layers {
            return Err(HarnessError::Shape(format!(
                "model has {layers} matrix layers, not {}",
                layer + 1
            )));
        }
        let set = Arc::new(FaultSet::new(faults, &self.config)?);
        let outcomes = self.run(&set, Some(layer))?;
        Ok(self.score(&outcomes))
    }

    fn prepare(&self, faults: &Arc<FaultSet>, only: Option<usize>) -> Result<Vec<MatrixStage>> {
        let spec = self.config.precision;
        let clean = Arc::new(FaultSet::empty());
        let mut stages = Vec::new();
        for (index, layer) in self.model.dense_layers().enumerate() {
            let faults = if only.is_none_or(|l| l == index) {
                faults
            } else {
                &clean
            };
            let plan = map_layer(layer.inputs, layer.outputs, &self.config);
            let (words, weight_scale): (Vec<u16>, f64) = if spec.is_float() {
                let w = layer
                    .weights
                    .iter()
                    .map(|&w| from_f64(bf16_value(w), Rounding::RoundNearestEven, &spec))
                    .collect();
                (w, 1.0)
            } else {
                let s = int8_scale(layer.weights.iter().map(|&w| bf16_value(w)));
                let q: Vec<i8> = layer
                    .weights
                    .iter()
                    .map(|&w| quantize(bf16_value(w), s))
                    .collect();
                (int8_words(&q), s)
            };
            let reencoded = Dense {
                weights: words,
                ..layer.clone()
            };
            let mut blocks = Vec::with_capacity(plan.row_blocks);
            for rb in 0..plan.row_blocks {
                let mut row = Vec::with_capacity(plan.col_blocks);
                for cb in 0..plan.col_blocks {
                    row.push(ProgrammedCrossbar::program(
                        &plan.block(&reencoded, rb, cb),
                        self.config,
                        faults.clone(),
                    )?);
                }
                blocks.push(row);
            }
            let bias: Vec<f64> = layer.bias.iter().map(|&b| bf16_value(b)).collect();
            let bias_words = if spec.is_float() {
                bias.iter()
                    .map(|&b| from_f64(b, Rounding::RoundNearestEven, &spec))
                    .collect()
            } else {
                Vec::new()
            };
            stages.push(MatrixStage {
                plan,
                blocks,
                bias_words,
                bias,
                weight_scale,
            });
        }
        Ok(stages)
    }

    fn run(&self, faults: &Arc<FaultSet>, only: Option<usize>) -> Result<Vec<SampleOutcome>> {
        let stages = self.prepare(faults, only)?;
        self.dataset
            .features
            .par_iter()
            .map(|x| self.forward(&stages, x))
            .collect()
    }

    fn encode_input(&self, x: &[f64]) -> Act {
        let spec = self.config.precision;
        if spec.is_float() {
            Act::Words(
                x.iter()
                    .map(|&v| from_f64(v, Rounding::RoundNearestEven, &spec))
                    .collect(),
            )
        } else {
            Act::Reals(x.to_vec())
        }
    }

    fn values(&self, act: &Act) -> Vec<f64> {
        match act {
            Act::Words(w) => w
                .iter()
                .map(|&w| to_f64(w, &self.config.precision))
                .collect(),
            Act::Reals(r) => r.clone(),
        }
    }

    fn forward(&self, stages: &[MatrixStage], x: &[f64]) -> Result<SampleOutcome> {
        let mut act = self.encode_input(x);
        let mut outcome = SampleOutcome {
            prediction: None,
            layers: Vec::new(),
            nonfinite: false,
        };
        let mut stage = stages.iter();
        for layer in &self.model.layers {
            let next = match layer {
                Layer::Dense(_) => self.matrix(stage.next().expect("stage per matrix layer"), &act),
                Layer::Conv2d(c) => {
                    self.conv(stage.next().expect("stage per matrix layer"), c, &act)
                }
                Layer::Relu { .. } => Ok(relu(act, &self.config.precision)),
                Layer::MaxPool { c, h, w, size } => Ok(self.max_pool(&act, *c, *h, *w, *size)),
                Layer::Flatten { .. } => Ok(act),
                Layer::ArgmaxHead { .. } => {
                    let logits = self.values(&act);
                    if logits.iter().all(|v| v.is_finite()) {
                        outcome.prediction = Some(argmax(&logits));
                    } else {
                        outcome.nonfinite = true;
                    }
                    return Ok(outcome);
                }
            };
            act = match next {
                Ok(a) => a,
                Err(HarnessError::Core(fpcim::Error::NonFinite(_))) => {
                    outcome.nonfinite = true;
                    return Ok(outcome);
                }
                Err(e) => return Err(e),
            };
            if matches!(layer, Layer::Dense(_) | Layer::Conv2d(_)) {
                outcome.layers.push(self.values(&act));
            }
        }
        Ok(outcome)
    }

    fn matrix(&self, stage: &MatrixStage, act: &Act) -> Result<Act> {
        let plan = &stage.plan;
        let oc = plan.oc;
        match act {
            Act::Words(x) => {
                let spec = self.config.precision;
                let mut partials = vec![Vec::with_capacity(plan.row_blocks + 1); plan.outputs];
                for (rb, row) in stage.blocks.iter().enumerate() {
                    let xin = plan.input_block(x, rb);
                    for (cb, xbar) in row.iter().enumerate() {
                        let y = xbar.matvec(&xin)?;
                        for (c, &word) in y.iter().enumerate() {
                            if let Some(p) = partials.get_mut(cb * oc + c) {
                                p.push(word);
                            }
                        }
                    }
                }
                Ok(Act::Words(
                    partials
                        .into_iter()
                        .zip(&stage.bias_words)
                        .map(|(mut p, &b)| {
                            p.push(b);
                            merge_words(&p, self.config.rounding, &spec)
                        })
                        .collect(),
                ))
            }
            Act::Reals(x) => {
                let sx = int8_scale(x.iter().copied());
                let q: Vec<i8> = x.iter().map(|&v| quantize(v, sx)).collect();
                let mut totals = vec![0i64; plan.outputs];
                for (rb, row) in stage.blocks.iter().enumerate() {
                    let xin = plan.input_block(&q, rb);
                    for (cb, xbar) in row.iter().enumerate() {
                        let y = xbar.int8_matvec(&xin)?;
                        for (c, &s) in y.iter().enumerate() {
                            if let Some(t) = totals.get_mut(cb * oc + c) {
                                *t += s;
                            }
                        }
                    }
                }
                let scale = sx * stage.weight_scale;
                Ok(Act::Reals(
                    totals
                        .iter()
                        .zip(&stage.bias)
                        .map(|(&t, &b)| t as f64 * scale + b)
                        .collect(),
                ))
            }
        }
    }

    /// Lowers the convolution with im2col and runs one matrix product per
    /// output position.
    fn conv(&self, stage: &MatrixStage, c: &Conv2d, act: &Act) -> Result<Act> {
        let (oh, ow) = (c.out_h(), c.out_w());
        let positions = oh * ow;
        let patch_index = |oy: usize, ox: usize| -> Vec<usize> {
            let mut idx = Vec::with_capacity(c.c_in * c.k * c.k);
            for ci in 0..c.c_in {
                for ky in 0..c.k {
                    for kx in 0..c.k {
                        idx.push((ci * c.h + oy + ky) * c.w + ox + kx);
                    }
                }
            }
            idx
        };
        let gather = |oy, ox| match act {
            Act::Words(x) => Act::Words(patch_index(oy, ox).into_iter().map(|i| x[i]).collect()),
            Act::Reals(x) => Act::Reals(patch_index(oy, ox).into_iter().map(|i| x[i]).collect()),
        };
        let mut words = vec![0u16; c.c_out * positions];
        let mut reals = vec![0f64; c.c_out * positions];
        for oy in 0..oh {
            for ox in 0..ow {
                let pos = oy * ow + ox;
                match self.matrix(stage, &gather(oy, ox))? {
                    Act::Words(y) => y
                        .iter()
                        .enumerate()
                        .for_each(|(co, &v)| words[co * positions + pos] = v),
                    Act::Reals(y) => y
                        .iter()
                        .enumerate()
                        .for_each(|(co, &v)| reals[co * positions + pos] = v),
                }
            }
        }
        Ok(match act {
            Act::Words(_) => Act::Words(words),
            Act::Reals(_) => Act::Reals(reals),
        })
    }

    fn max_pool(&self, act: &Act, c: usize, h: usize, w: usize, size: usize) -> Act {
        let (oh, ow) = (h / size, w / size);
        let values = self.values(act);
        let mut best = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut arg = (ch * h + oy * size) * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = (ch * h + oy * size + dy) * w + ox * size + dx;
                            if values[i].is_nan() || values[i] > values[arg] {
                                arg = i;
                            }
                        }
                    }
                    best[(ch * oh + oy) * ow + ox] = arg;
                }
            }
        }
        match act {
            Act::Words(x) => Act::Words(best.iter().map(|&i| x[i]).collect()),
            Act::Reals(x) => Act::Reals(best.iter().map(|&i| x[i]).collect()),
        }
    }

    fn score(&self, outcomes: &[SampleOutcome]) -> AccuracyResult {
        let total = outcomes.len();
        let correct = outcomes
            .iter()
            .zip(&self.dataset.labels)
            .filter(|(o, &l)| o.prediction == Some(l))
            .count();
        let floor = if self.config.precision.is_float() {
            2f64.powi(1 - self.config.precision.bias)
        } else {
            f64::from(f32::MIN_POSITIVE)
        };
        let depth = self.clean.first().map_or(0, |o| o.layers.len());
        let layer_errors = (0..depth)
            .map(|l| {
                let mut errs = Vec::new();
                for (o, clean) in outcomes.iter().zip(&self.clean) {
                    let reference = &clean.layers[l];
                    match o.layers.get(l) {
                        Some(vals) => errs.extend(vals.iter().zip(reference).map(|(&a, &b)| {
                            if a.is_finite() {
                                (a - b).abs() / b.abs().max(floor)
                            } else {
                                f64::INFINITY
                            }
                        })),
                        None => errs.extend(std::iter::repeat_n(f64::INFINITY, reference.len())),
                    }
                }
                median(&mut errs)
            })
            .collect();
        AccuracyResult {
            correct,
            total,
            accuracy: correct as f64 / total as f64,
            layer_errors,
            nonfinite: outcomes.iter().filter(|o| o.nonfinite).count(),
        }
    }
}

fn relu(act: Act, spec: &PrecisionSpec) -> Act {
    match act {
        Act::Words(w) => Act::Words(
            w.into_iter()
                .map(|v| if to_f64(v, spec) < 0.0 { 0 } else { v })
                .collect(),
        ),
        Act::Reals(r) => Act::Reals(r.into_iter().map(|v| v.max(0.0)).collect()),
    }
}

/// Index of the first maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Lower median; 0 for an empty slice.
fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Accuracy of the model computed in exact arithmetic with every layer
/// output rounded once to the nearest word of `spec`.
pub fn software_accuracy(model: &LayerGraph, dataset: &Dataset, spec: &PrecisionSpec) -> f64 {
    assert!(
        spec.is_float(),
        "software reference needs a floating-point format"
    );
    let encode = |v: f64| from_f64(v, Rounding::RoundNearestEven, spec);
    let dense = |d: &Dense, x: &[u16]| -> Vec<u16> {
        (0..d.outputs)
            .map(|o| {
                let col: Vec<u16> = (0..d.inputs)
                    .map(|i| encode(bf16_value(d.weights[i * d.outputs + o])))
                    .collect();
                let bias = word_value(encode(bf16_value(d.bias[o])), spec).expect("finite bias");
                exact_dot(x, &col, spec)
                    .add(&bias)
                    .to_word(Rounding::RoundNearestEven, spec)
            })
            .collect()
    };
    let correct = dataset
        .features
        .par_iter()
        .zip(&dataset.labels)
        .filter(|(x, &label)| {
            let mut act: Vec<u16> = x.iter().map(|&v| encode(v)).collect();
            for layer in &model.layers {
                act = match layer {
                    Layer::Dense(d) => dense(d, &act),
                    Layer::Relu { .. } => act
                        .iter()
                        .map(|&w| if to_f64(w, spec) < 0.0 { 0 } else { w })
                        .collect(),
                    Layer::Flatten { .. } => act,
                    Layer::ArgmaxHead { .. } => {
                        let v: Vec<f64> = act.iter().map(|&w| to_f64(w, spec)).collect();
                        return v.iter().all(|x| x.is_finite()) && argmax(&v) == label;
                    }
                    Layer::Conv2d(_) | Layer::MaxPool { .. } => {
                        unimplemented!("software reference covers dense models only")
                    }
                };
            }
            false
        })
        .count();
    correct as f64 / dataset.len() as f64
}
