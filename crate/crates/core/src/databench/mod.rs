//! Synthetic series, CSV ingestion, windowing, corruption operators and
//! shift/error metrics.

mod corrupt;
mod dataset;
mod ingest;
mod metrics;
mod synth;

pub use corrupt::{
    corrupt, corrupt_window, perlin_noise, CorruptionSpec, PERLIN_BASE_FREQ, PERLIN_OCTAVES,
    PERLIN_PERSISTENCE,
};
pub use dataset::{window, NormStats, SequenceDataset};
pub use ingest::{ingest_csv, write_series_csv};
pub use metrics::{mse, wasserstein1, wasserstein1_sets};
pub use synth::{synth_series, ShiftFamilyConfig};
