use rand::Rng;

use super::dataset::SequenceDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Cycles per window of the lowest Perlin octave.
pub const PERLIN_BASE_FREQ: f64 = 4.0;
pub const PERLIN_OCTAVES: usize = 8;
pub const PERLIN_PERSISTENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum CorruptionSpec {
    Gaussian { sigma: f64 },
    Perlin {
        amplitude: f64,
        octaves: usize,
        persistence: f64,
        base_freq: f64,
    },
    Cutout { ratio: f64, fill: f64 },
}

impl CorruptionSpec {
    pub fn gaussian(sigma: f64) -> Self {
        CorruptionSpec::Gaussian { sigma }
    }

    pub fn perlin(amplitude: f64) -> Self {
        CorruptionSpec::Perlin {
            amplitude,
            octaves: PERLIN_OCTAVES,
            persistence: PERLIN_PERSISTENCE,
            base_freq: PERLIN_BASE_FREQ,
        }
    }

    pub fn cutout(ratio: f64) -> Self {
        CorruptionSpec::Cutout { ratio, fill: 1.0 }
    }

    /// Builds a spec from a kind name and its intensity parameter.
    pub fn from_kind(kind: &str, level: f64) -> Result<Self> {
        let spec = match kind {
            "gaussian" => Self::gaussian(level),
            "perlin" => Self::perlin(level),
            "cutout" => Self::cutout(level),
            other => return Err(Error::config(format!("unknown corruption kind {other}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CorruptionSpec::Gaussian { .. } => "gaussian",
            CorruptionSpec::Perlin { .. } => "perlin",
            CorruptionSpec::Cutout { .. } => "cutout",
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            CorruptionSpec::Gaussian { sigma } => sigma,
            CorruptionSpec::Perlin { amplitude, .. } => amplitude,
            CorruptionSpec::Cutout { ratio, .. } => ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CorruptionSpec::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            CorruptionSpec::Perlin {
                amplitude,
                octaves,
                persistence,
                base_freq,
            } => amplitude.is_finite() && octaves >= 1 && persistence > 0.0 && base_freq > 0.0,
            CorruptionSpec::Cutout { ratio, fill } => (0.0..=1.0).contains(&ratio) && fill.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid corruption {self:?}")))
        }
    }
}

/// Applies `spec` to every window independently.
pub fn corrupt<R: Rng + ?Sized>(ds: &SequenceDataset, spec: &CorruptionSpec, rng: &mut R) -> Result<SequenceDataset> {
    spec.validate()?;
    let mut out = ds.clone();
    for w in out.windows.iter_mut() {
        corrupt_window(w, spec, rng);
    }
    Ok(out)
}

pub fn corrupt_window<R: Rng + ?Sized>(w: &mut [f64], spec: &CorruptionSpec, rng: &mut R) {
    match *spec {
        CorruptionSpec::Gaussian { sigma } => {
            if sigma > 0.0 {
                for v in w.iter_mut() {
                    *v += sigma * rng::normal(rng);
                }
            }
        }
        CorruptionSpec::Perlin {
            amplitude,
            octaves,
            persistence,
            base_freq,
        } => {
            if amplitude != 0.0 {
                let p = perlin_noise(w.len(), octaves, persistence, base_freq, rng);
                for (v, n) in w.iter_mut().zip(p) {
                    *v += amplitude * n;
                }
            }
        }
        CorruptionSpec::Cutout { ratio, fill } => {
            let len = (ratio * w.len() as f64).round() as usize;
            if len > 0 {
                let start = rng.random_range(0..=w.len() - len);
                w[start..start + len].fill(fill);
            }
        }
    }
}

fn fade(u: f64) -> f64 {
    u * u * u * (u * (u * 6.0 - 15.0) + 10.0)
}

/// Fractal 1-D gradient noise over `len` positions, rescaled so its max
/// absolute value is 1 (all zeros stay zeros).
pub fn perlin_noise<R: Rng + ?Sized>(
    len: usize,
    octaves: usize,
    persistence: f64,
    base_freq: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for o in 0..octaves {
        let freq = base_freq * 2f64.powi(o as i32);
        let weight = persistence.powi(o as i32);
        let nodes = freq.ceil() as usize + 2;
        let grads: Vec<f64> = (0..nodes).map(|_| rng.random_range(-1.0..=1.0)).collect();
        for (i, t) in total.iter_mut().enumerate() {
            let x = i as f64 * freq / len as f64;
            let cell = x.floor();
            let u = x - cell;
            let k = cell as usize;
            let a = grads[k] * u;
            let b = grads[k + 1] * (u - 1.0);
            *t += weight * (a + fade(u) * (b - a));
        }
    }
    let max = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        total.iter_mut().for_each(|v| *v /= max);
    }
    total
}
