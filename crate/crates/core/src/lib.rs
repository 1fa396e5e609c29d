//! Bit-exact model of a digital floating-point compute-in-memory crossbar.
//!
//! The datapath decodes operands into fixed-point mantissas, aligns them to
//! shared group exponents, multiplies them in memory, reduces each column
//! through a binary adder tree with an optional mid-tree alignment, and
//! normalizes the sum back into a floating-point word. Every stage exposes a
//! hook for persistent single-bit-flip faults.

pub mod align;
pub mod bits;
pub mod codec;
pub mod config;
pub mod datapath;
pub mod error;
pub mod fault;
pub mod oracle;

pub use codec::{Format, PrecisionSpec, Rounding};
pub use config::{CrossbarConfig, Paradigm, Stencil};
pub use datapath::{PipelineTrace, ProgrammedCrossbar};
pub use error::{Error, Result};
pub use fault::{FaultCampaign, FaultSet, FaultSite, FaultSpec, Stage};
