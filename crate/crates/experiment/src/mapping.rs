//! Partitioning of matrix layers into crossbar-sized weight blocks.

use fpcim::CrossbarConfig;

use crate::model::Dense;

/// How one matrix layer is spread over repeated programmings of the same
/// physical crossbar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilingPlan {
    pub inputs: usize,
    pub outputs: usize,
    pub ic: usize,
    pub oc: usize,
    /// Blocks along the input dimension, merged as partial sums.
    pub row_blocks: usize,
    pub col_blocks: usize,
}

impl TilingPlan {
    pub fn programmings(&self) -> usize {
        self.row_blocks * self.col_blocks
    }

    /// Crossbar-shaped, zero-padded weight block `(rb, cb)` in row-major
    /// `ic x oc` order.
    pub fn block(&self, layer: &Dense, rb: usize, cb: usize) -> Vec<u16> {
        let mut out = vec![0u16; self.ic * self.oc];
        for r in 0..self.ic {
            let i = rb * self.ic + r;
            if i >= self.inputs {
                break;
            }
            for c in 0..self.oc {
                let o = cb * self.oc + c;
                if o < self.outputs {
                    out[r * self.oc + c] = layer.weights[i * self.outputs + o];
                }
            }
        }
        out
    }

    /// Input slice for row block `rb`, zero-padded to the crossbar height.
    pub fn input_block<T: Copy + Default>(&self, x: &[T], rb: usize) -> Vec<T> {
        let mut out = vec![T::default(); self.ic];
        let start = rb * self.ic;
        let end = (start + self.ic).min(x.len());
        out[..end - start].copy_from_slice(&x[start..end]);
        out
    }
}

pub fn map_layer(inputs: usize, outputs: usize, config: &CrossbarConfig) -> TilingPlan {
    TilingPlan {
        inputs,
        outputs,
        ic: config.ic,
        oc: config.oc,
        row_blocks: inputs.div_ceil(config.ic),
        col_blocks: outputs.div_ceil(config.oc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_counts() {
        let cfg = CrossbarConfig::baseline();
        assert_eq!(map_layer(784, 32, &cfg).programmings(), 7);
        assert_eq!(map_layer(100, 20, &cfg).programmings(), 1);
        let p = map_layer(128, 64, &cfg);
        assert_eq!((p.row_blocks, p.col_blocks), (1, 2));
    }

    #[test]
    fn edge_blocks_are_zero_padded() {
        let cfg = CrossbarConfig::baseline();
        let layer = Dense {
            inputs: 100,
            outputs: 20,
            weights: (0..2000).map(|i| i as u16 + 1).collect(),
            bias: vec![0; 20],
        };
        let plan = map_layer(100, 20, &cfg);
        let b = plan.block(&layer, 0, 0);
        assert_eq!(b[0], 1);
        assert_eq!(b[32 + 19], 20 + 19 + 1);
        assert_eq!(b[20], 0);
        assert!(b[100 * 32..].iter().all(|&w| w == 0));
        let x = plan.input_block(&[1u16; 100], 0);
        assert_eq!(x.len(), 128);
        assert!(x[..100].iter().all(|&v| v == 1) && x[100..].iter().all(|&v| v == 0));
    }
}
