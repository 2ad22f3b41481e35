use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Generator parameters for one synthetic series family.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFamilyConfig {
    pub id: String,
    /// Sinusoid frequencies in cycles per time step.
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Added per time step.
    pub trend: f64,
    /// The series is cut into `regime_offsets.len()` equal regimes, each
    /// shifted by its offset.
    pub regime_offsets: Vec<f64>,
    pub noise_std: f64,
}

impl ShiftFamilyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty() {
            return Err(Error::config(format!("family {}: needs at least one frequency", self.id)));
        }
        if self.frequencies.len() != self.amplitudes.len() {
            return Err(Error::config(format!(
                "family {}: {} frequencies but {} amplitudes",
                self.id,
                self.frequencies.len(),
                self.amplitudes.len()
            )));
        }
        if self.amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::config(format!("family {}: amplitudes must be >= 0", self.id)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config(format!("family {}: noise std must be >= 0", self.id)));
        }
        let all = self
            .frequencies
            .iter()
            .chain(&self.regime_offsets)
            .chain([&self.trend]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::config(format!("family {}: non-finite parameter", self.id)));
        }
        Ok(())
    }
}

/// Sinusoids with random phases, linear trend, regime offsets and Gaussian noise.
pub fn synth_series<R: Rng + ?Sized>(cfg: &ShiftFamilyConfig, length: usize, rng: &mut R) -> Result<Vec<f64>> {
    cfg.validate()?;
    if length == 0 {
        return Err(Error::config("series length must be positive"));
    }
    let phases: Vec<f64> = cfg.frequencies.iter().map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let regimes = cfg.regime_offsets.len().max(1);
    let mut out = Vec::with_capacity(length);
    for i in 0..length {
        let t = i as f64;
        let mut v: f64 = cfg
            .frequencies
            .iter()
            .zip(&cfg.amplitudes)
            .zip(&phases)
            .map(|((f, a), p)| a * (2.0 * PI * f * t + p).sin())
            .sum();
        v += cfg.trend * t;
        if let Some(off) = cfg.regime_offsets.get(i * regimes / length) {
            v += off;
        }
        if cfg.noise_std > 0.0 {
            v += cfg.noise_std * rng::normal(rng);
        }
        out.push(v);
    }
    Ok(out)
}
