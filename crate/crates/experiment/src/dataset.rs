use std::path::Path;

use crate::error::{io_err, HarnessError, Result};

/// Labelled feature vectors, kept as decimal reals until a precision is
/// chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// The first `n` samples.
    pub fn truncated(mut self, n: usize) -> Dataset {
        self.features.truncate(n);
        self.labels.truncate(n);
        self
    }

    /// Headerless CSV, label first.
    pub fn from_reader(reader: impl std::io::Read) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(reader);
        let mut ds = Dataset {
            features: Vec::new(),
            labels: Vec::new(),
        };
        for (n, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |what: &str| HarnessError::Dataset(format!("row {}: {what}", n + 1));
            let mut fields = row.iter();
            let label = fields
                .next()
                .and_then(|l| l.trim().parse::<usize>().ok())
                .ok_or_else(|| bad("label is not a class index"))?;
            let feats = fields
                .map(|f| f.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| bad("feature is not a finite real"))?;
            if n > 0 && feats.len() != ds.width() {
                return Err(bad("feature count differs from the first row"));
            }
            ds.labels.push(label);
            ds.features.push(feats);
        }
        Ok(ds)
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Dataset::from_reader(file)
}
