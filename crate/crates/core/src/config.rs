//! Architectural design points of the crossbar.

use std::fmt;

use crate::codec::{Format, PrecisionSpec, Rounding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stencil {
    /// One `IC x OC` array with a `log2(IC)`-level adder tree per column.
    Monolithic,
    /// `h x w` independent `ic x oc` tiles, each with its own adder trees and
    /// normalizers.
    Tiled {
        ic: usize,
        oc: usize,
        h: usize,
        w: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Paradigm {
    /// Inputs and weights shift to their group maximum before multiplication.
    PreAlignment { group: usize },
    /// Products shift in local groups after multiplication.
    PostAlignment { local_group: usize },
}

impl Paradigm {
    pub fn group_size(&self) -> usize {
        match *self {
            Paradigm::PreAlignment { group } => group,
            Paradigm::PostAlignment { local_group } => local_group,
        }
    }

    pub fn is_pre(&self) -> bool {
        matches!(self, Paradigm::PreAlignment { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CrossbarConfig {
    pub ic: usize,
    pub oc: usize,
    pub stencil: Stencil,
    pub paradigm: Paradigm,
    pub precision: PrecisionSpec,
    pub rounding: Rounding,
}

fn log2_exact(n: usize, what: &str) -> Result<u32> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Config(format!("{what} = {n} is not a power of two")));
    }
    Ok(n.trailing_zeros())
}

impl CrossbarConfig {
    /// 128 x 32 monolithic pre-alignment crossbar, group 16, BF16, truncating.
    pub fn baseline() -> CrossbarConfig {
        CrossbarConfig {
            ic: 128,
            oc: 32,
            stencil: Stencil::Monolithic,
            paradigm: Paradigm::PreAlignment { group: 16 },
            precision: PrecisionSpec::BF16,
            rounding: Rounding::Truncate,
        }
    }

    /// Baseline geometry with alignment deferred until after multiplication.
    pub fn post_aligned() -> CrossbarConfig {
        CrossbarConfig {
            paradigm: Paradigm::PostAlignment { local_group: 16 },
            ..Self::baseline()
        }
    }

    /// 8 x 4 x 16 x 8 tiles, post-alignment with local groups of 4 and global
    /// alignment after two adder levels.
    pub fn hardened() -> CrossbarConfig {
        CrossbarConfig {
            stencil: Stencil::Tiled {
                ic: 8,
                oc: 4,
                h: 16,
                w: 8,
            },
            paradigm: Paradigm::PostAlignment { local_group: 4 },
            ..Self::baseline()
        }
    }

    /// Hardened tiling whose local group spans a whole tile column, so no
    /// alignment happens inside the adder tree.
    pub fn tiled_without_global_alignment() -> CrossbarConfig {
        CrossbarConfig {
            paradigm: Paradigm::PostAlignment { local_group: 8 },
            ..Self::hardened()
        }
    }

    pub fn with_precision(mut self, format: Format) -> CrossbarConfig {
        self.precision = PrecisionSpec::of(format);
        self
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> CrossbarConfig {
        self.rounding = rounding;
        self
    }

    /// Looks up a named design point; an optional `-fp8`/`-int8`/`-bf16`
    /// suffix overrides the precision.
    pub fn preset(name: &str) -> Result<CrossbarConfig> {
        let (base, format) = match name.rsplit_once('-') {
            Some((b, suffix)) if suffix.parse::<Format>().is_ok() => (b, suffix.parse().ok()),
            _ => (name, None),
        };
        let cfg = match base {
            "baseline" | "pre" => Self::baseline(),
            "post" => Self::post_aligned(),
            "hardened" => Self::hardened(),
            "tiled-noga" => Self::tiled_without_global_alignment(),
            "tiled-pre" => CrossbarConfig {
                paradigm: Paradigm::PreAlignment { group: 8 },
                ..Self::hardened()
            },
            other => return Err(Error::Config(format!("unknown design `{other}`"))),
        };
        Ok(match format {
            Some(f) => cfg.with_precision(f),
            None => cfg,
        })
    }

    pub fn validate(&self) -> Result<()> {
        log2_exact(self.ic, "IC")?;
        log2_exact(self.oc, "OC")?;
        if let Stencil::Tiled { ic, oc, h, w } = self.stencil {
            log2_exact(ic, "ic")?;
            log2_exact(oc, "oc")?;
            if ic * h != self.ic || oc * w != self.oc {
                return Err(Error::Config(format!(
                    "tiling {ic}x{oc}x{h}x{w} does not cover {}x{}",
                    self.ic, self.oc
                )));
            }
        }
        if self.precision.is_float() {
            let g = self.paradigm.group_size();
            log2_exact(g, "alignment group")?;
            if g > self.tree_rows() {
                return Err(Error::Config(format!(
                    "alignment group {g} exceeds the {} rows of one adder tree",
                    self.tree_rows()
                )));
            }
        }
        Ok(())
    }

    /// Rows reduced by one adder tree.
    pub fn tree_rows(&self) -> usize {
        match self.stencil {
            Stencil::Monolithic => self.ic,
            Stencil::Tiled { ic, .. } => ic,
        }
    }

    pub fn row_blocks(&self) -> usize {
        self.ic / self.tree_rows()
    }

    pub fn is_tiled(&self) -> bool {
        matches!(self.stencil, Stencil::Tiled { .. })
    }

    pub fn depth(&self) -> u32 {
        self.tree_rows().trailing_zeros()
    }

    /// Adder level after which partial sums are re-aligned; `None` for INT8.
    pub fn global_align_level(&self) -> Option<u32> {
        self.precision
            .is_float()
            .then(|| self.paradigm.group_size().trailing_zeros())
    }

    /// Output width of adder level `level` (level 0 is the products).
    pub fn level_width(&self, level: u32) -> u32 {
        self.precision.product_width + level
    }

    pub fn final_width(&self) -> u32 {
        self.level_width(self.depth())
    }

    pub fn total_macs(&self) -> usize {
        self.ic * self.oc
    }
}

impl fmt::Display for CrossbarConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stencil {
            Stencil::Monolithic => write!(f, "{}x{}", self.ic, self.oc)?,
            Stencil::Tiled { ic, oc, h, w } => write!(f, "{ic}x{oc}x{h}x{w}")?,
        }
        match self.paradigm {
            Paradigm::PreAlignment { group } => write!(f, " pre(g={group})")?,
            Paradigm::PostAlignment { local_group } => write!(f, " post(G={local_group})")?,
        }
        write!(f, " {} {:?}", self.precision.format, self.rounding)
    }
}
