//! Layer graphs and the binary model file.
//!
//! File layout, all integers little-endian: the magic `FPCM`, a `u32` layer
//! count, then per layer a `u8` kind tag, its `u32` shape fields and its
//! parameters as `u16` BF16 words.
//!
//! | tag | layer      | shape                     | parameters                         |
//! |-----|------------|---------------------------|------------------------------------|
//! | 1   | Dense      | in, out                   | `in x out` weights, `out` biases   |
//! | 2   | ReLU       | width                     |                                    |
//! | 3   | Conv2D     | c_in, h, w, c_out, k      | `c_in*k*k x c_out` weights, biases |
//! | 4   | MaxPool    | c, h, w, size             |                                    |
//! | 5   | Flatten    | width                     |                                    |
//! | 6   | ArgmaxHead | classes                   |                                    |

use std::path::Path;

use fpcim::codec::to_f64;
use fpcim::PrecisionSpec;

use crate::error::{io_err, HarnessError, Result};

const MAGIC: &[u8; 4] = b"FPCM";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `inputs x outputs` BF16 words.
    pub weights: Vec<u16>,
    pub bias: Vec<u16>,
}

/// Stride-1, unpadded square convolution over CHW activations. The kernel is
/// stored already lowered: row `(ci*k + ky)*k + kx`, column `co`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2d {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub kernel: Dense,
}

impl Conv2d {
    pub fn out_h(&self) -> usize {
        self.h + 1 - self.k
    }

    pub fn out_w(&self) -> usize {
        self.w + 1 - self.k
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Dense(Dense),
    Relu {
        width: usize,
    },
    Conv2d(Conv2d),
    MaxPool {
        c: usize,
        h: usize,
        w: usize,
        size: usize,
    },
    Flatten {
        width: usize,
    },
    ArgmaxHead {
        classes: usize,
    },
}

impl Layer {
    pub fn input_width(&self) -> usize {
        match self {
            Layer::Dense(d) => d.inputs,
            Layer::Relu { width } | Layer::Flatten { width } => *width,
            Layer::Conv2d(c) => c.c_in * c.h * c.w,
            Layer::MaxPool { c, h, w, .. } => c * h * w,
            Layer::ArgmaxHead { classes } => *classes,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Layer::Dense(d) => d.outputs,
            Layer::Relu { width } | Layer::Flatten { width } => *width,
            Layer::Conv2d(c) => c.c_out * c.out_h() * c.out_w(),
            Layer::MaxPool { c, h, w, size } => c * (h / size) * (w / size),
            Layer::ArgmaxHead { classes } => *classes,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Relu { .. } => "relu",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten { .. } => "flatten",
            Layer::ArgmaxHead { .. } => "argmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGraph {
    pub layers: Vec<Layer>,
}

impl LayerGraph {
    pub fn new(layers: Vec<Layer>) -> Result<LayerGraph> {
        let g = LayerGraph { layers };
        g.validate()?;
        Ok(g)
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Layer::input_width)
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_width)
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            Layer::Conv2d(c) => Some(&c.kernel),
            _ => None,
        })
    }

    /// Checks that shapes compose, the graph ends in an argmax head and
    /// every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Shape(msg));
        if !matches!(self.layers.last(), Some(Layer::ArgmaxHead { .. })) {
            return bad("model must end with an argmax head".into());
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if a.output_width() != b.input_width() {
                return bad(format!(
                    "layer {i} ({}) produces {} values but layer {} ({}) expects {}",
                    a.name(),
                    a.output_width(),
                    i + 1,
                    b.name(),
                    b.input_width()
                ));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::MaxPool { h, w, size, .. }
                    if *size == 0 || h % size != 0 || w % size != 0 =>
                {
                    return bad(format!(
                        "layer {i}: pool size {size} does not divide {h}x{w}"
                    ));
                }
                Layer::Conv2d(c) if c.k == 0 || c.k > c.h || c.k > c.w => {
                    return bad(format!(
                        "layer {i}: kernel {} does not fit {}x{}",
                        c.k, c.h, c.w
                    ));
                }
                _ => {}
            }
        }
        for (i, d) in self.dense_layers().enumerate() {
            if d.weights.len() != d.inputs * d.outputs || d.bias.len() != d.outputs {
                return bad(format!(
                    "matrix layer {i} has inconsistent parameter counts"
                ));
            }
            let finite = |w: &u16| to_f64(*w, &PrecisionSpec::BF16).is_finite();
            if let Some(p) = d.weights.iter().chain(&d.bias).position(|w| !finite(w)) {
                return Err(HarnessError::Model(format!(
                    "matrix layer {i}: parameter {p} is not finite"
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let u32s = |out: &mut Vec<u8>, vals: &[usize]| {
            for &v in vals {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        };
        let words = |out: &mut Vec<u8>, ws: &[u16]| {
            for &w in ws {
                out.extend_from_slice(&w.to_le_bytes());
            }
        };
        u32s(&mut out, &[self.layers.len()]);
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(1);
                    u32s(&mut out, &[d.inputs, d.outputs]);
                    words(&mut out, &d.weights);
                    words(&mut out, &d.bias);
                }
                Layer::Relu { width } => {
                    out.push(2);
                    u32s(&mut out, &[*width]);
                }
                Layer::Conv2d(c) => {
                    out.push(3);
                    u32s(&mut out, &[c.c_in, c.h, c.w, c.c_out, c.k]);
                    words(&mut out, &c.kernel.weights);
                    words(&mut out, &c.kernel.bias);
                }
                Layer::MaxPool { c, h, w, size } => {
                    out.push(4);
                    u32s(&mut out, &[*c, *h, *w, *size]);
                }
                Layer::Flatten { width } => {
                    out.push(5);
                    u32s(&mut out, &[*width]);
                }
                Layer::ArgmaxHead { classes } => {
                    out.push(6);
                    u32s(&mut out, &[*classes]);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<LayerGraph> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(HarnessError::Model("missing FPCM magic".into()));
        }
        let count = r.u32()?;
        let mut layers = Vec::new();
        for _ in 0..count {
            let layer = match r.take(1)?[0] {
                1 => {
                    let (i, o) = (r.u32()?, r.u32()?);
                    Layer::Dense(r.dense(i, o)?)
                }
                2 => Layer::Relu { width: r.u32()? },
                3 => {
                    let (c_in, h, w, c_out, k) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
                    let kernel = r.dense(c_in * k * k, c_out)?;
                    Layer::Conv2d(Conv2d {
                        c_in,
                        h,
                        w,
                        c_out,
                        k,
                        kernel,
                    })
                }
                4 => Layer::MaxPool {
                    c: r.u32()?,
                    h: r.u32()?,
                    w: r.u32()?,
                    size: r.u32()?,
                },
                5 => Layer::Flatten { width: r.u32()? },
                6 => Layer::ArgmaxHead { classes: r.u32()? },
                t => {
                    return Err(HarnessError::Model(format!(
                        "unknown layer tag {t} at byte {}",
                        r.pos - 1
                    )))
                }
            };
            layers.push(layer);
        }
        if r.pos != bytes.len() {
            return Err(HarnessError::Model(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        LayerGraph::new(layers)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                HarnessError::Model(format!("model file truncated at byte {}", self.bytes.len()))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn words(&mut self, n: usize) -> Result<Vec<u16>> {
        let len = n
            .checked_mul(2)
            .ok_or_else(|| HarnessError::Model("parameter count overflows".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect())
    }

    fn dense(&mut self, inputs: usize, outputs: usize) -> Result<Dense> {
        let n = inputs
            .checked_mul(outputs)
            .ok_or_else(|| HarnessError::Model("layer shape overflows".into()))?;
        Ok(Dense {
            inputs,
            outputs,
            weights: self.words(n)?,
            bias: self.words(outputs)?,
        })
    }
}

pub fn load_model(path: &Path) -> Result<LayerGraph> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    LayerGraph::from_bytes(&bytes)
}

pub fn save_model(graph: &LayerGraph, path: &Path) -> Result<()> {
    std::fs::write(path, graph.to_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp() -> LayerGraph {
        let dense = |i: usize, o: usize| {
            Layer::Dense(Dense {
                inputs: i,
                outputs: o,
                weights: vec![0x3F80; i * o],
                bias: vec![0; o],
            })
        };
        LayerGraph::new(vec![
            dense(784, 32),
            Layer::Relu { width: 32 },
            dense(32, 10),
            Layer::ArgmaxHead { classes: 10 },
        ])
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let g = mlp();
        let back = LayerGraph::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.dense_layers().count(), 2);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = mlp().to_bytes();
        for cut in [2, 9, 100, bytes.len() - 1] {
            assert!(matches!(
                LayerGraph::from_bytes(&bytes[..cut]),
                Err(HarnessError::Model(_))
            ));
        }
    }

    #[test]
    fn nan_weight_is_rejected() {
        let mut g = mlp();
        if let Layer::Dense(d) = &mut g.layers[0] {
            d.weights[17] = 0x7FC0;
        }
        let err = LayerGraph::from_bytes(&g.to_bytes()).unwrap_err();
        assert!(err.to_string().contains("not finite"), "{err}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let layers = vec![Layer::Relu { width: 4 }, Layer::ArgmaxHead { classes: 3 }];
        assert!(matches!(
            LayerGraph::new(layers),
            Err(HarnessError::Shape(_))
        ));
    }
}
