//! Desk-scale inference and fault-sweep tooling on top of the `fpcim`
//! crossbar model.

pub mod dataset;
pub mod drift;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod mapping;
pub mod model;

pub use dataset::{load_dataset, Dataset};
pub use error::{HarnessError, Result};
pub use harness::{AccuracyResult, Harness};
pub use model::{load_model, LayerGraph};

use std::path::PathBuf;

/// Directory holding the bundled digit classifier and its test split.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn bundled_model() -> PathBuf {
    data_dir().join("digits_mlp.fpcm")
}

pub fn bundled_dataset() -> PathBuf {
    data_dir().join("digits_test.csv")
}
