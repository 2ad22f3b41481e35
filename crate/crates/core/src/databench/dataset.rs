use std::path::Path;

use crate::error::{Error, Result};

/// z-score statistics taken from the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Population mean and std over all values; fails on constant input.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("normalization values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::config("normalization std must be positive"));
        }
        Ok(NormStats { mean, std })
    }

    pub fn identity() -> Self {
        NormStats { mean: 0.0, std: 1.0 }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Fixed-length windows split into an input head and a target tail.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub windows: Vec<Vec<f64>>,
    pub l_in: usize,
    pub l_out: usize,
    /// Statistics the windows are expressed in; identity for raw windows.
    pub norm: NormStats,
}

impl SequenceDataset {
    pub fn new(windows: Vec<Vec<f64>>, l_in: usize, l_out: usize, norm: NormStats) -> Result<Self> {
        if l_in == 0 || l_out == 0 {
            return Err(Error::config("window split sizes must be positive"));
        }
        if windows.is_empty() {
            return Err(Error::Empty("dataset windows"));
        }
        if let Some(w) = windows.iter().find(|w| w.len() != l_in + l_out) {
            return Err(Error::shape(
                "dataset",
                format!("window of length {}, expected {}", w.len(), l_in + l_out),
            ));
        }
        Ok(SequenceDataset {
            windows,
            l_in,
            l_out,
            norm,
        })
    }

    pub fn window_len(&self) -> usize {
        self.l_in + self.l_out
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.windows.iter().map(|w| &w[..self.l_in]).collect()
    }

    pub fn targets(&self) -> Vec<&[f64]> {
        self.windows.iter().map(|w| &w[self.l_in..]).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.windows.concat()
    }

    /// Statistics of this dataset's values in original units.
    pub fn fit_stats(&self) -> Result<NormStats> {
        let raw: Vec<f64> = self.values().iter().map(|&v| self.norm.denormalize(v)).collect();
        NormStats::fit(&raw)
    }

    /// Re-expresses the windows in `stats`.
    pub fn normalized(&self, stats: NormStats) -> Self {
        let windows = self
            .windows
            .iter()
            .map(|w| w.iter().map(|&v| stats.normalize(self.norm.denormalize(v))).collect())
            .collect();
        SequenceDataset {
            windows,
            norm: stats,
            ..self.clone()
        }
    }

    pub fn denormalized(&self) -> Self {
        self.normalized(NormStats::identity())
    }

    pub fn with_windows(&self, windows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(windows, self.l_in, self.l_out, self.norm)
    }

    /// One window per row, comma separated.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        for row in &self.windows {
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Overlapping windows of length `l_in + l_out` starting every `stride` steps.
pub fn window(series: &[f64], l_in: usize, l_out: usize, stride: usize) -> Result<SequenceDataset> {
    let len = l_in + l_out;
    if stride == 0 {
        return Err(Error::config("stride must be positive"));
    }
    if series.len() < len || len == 0 {
        return Err(Error::config(format!(
            "series of length {} is shorter than window {len}",
            series.len()
        )));
    }
    let count = (series.len() - len) / stride + 1;
    let windows = (0..count).map(|k| series[k * stride..k * stride + len].to_vec()).collect();
    SequenceDataset::new(windows, l_in, l_out, NormStats::identity())
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}
