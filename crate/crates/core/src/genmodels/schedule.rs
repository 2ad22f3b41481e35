use crate::error::{Error, Result};

/// Default std of the reverse-process noise on fine-tuned steps.
pub const DEFAULT_SIGMA_SAMP: f64 = 0.3;

/// Smallest per-step reverse std on steps that are not fine-tuned.
pub const MIN_STEP_STD: f64 = 1e-4;

/// Diffusion coefficients for steps `t = 1..=T`.
///
/// `alpha_bar(0) = 1`, so `sigma2(1) = 0` and `iota(1)` is infinite; the
/// denoising loss therefore only weights steps `t >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma2: Vec<f64>,
    iota: Vec<f64>,
    pub sigma_samp: f64,
}

impl NoiseSchedule {
    /// Linear `beta_t` from `beta_min` (t = 1) to `beta_max` (t = T).
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::config(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::config(format!(
                "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        let betas = (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    /// Schedule from explicit per-step betas (allows `T = 1`).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::config("betas must be nonempty and in (0, 1)"));
        }
        let t_max = betas.len();
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        for b in &betas {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - b));
        }
        let mut sigma2 = Vec::with_capacity(t_max);
        let mut iota = Vec::with_capacity(t_max);
        for t in 1..=t_max {
            let alpha = 1.0 - betas[t - 1];
            let s2 = (1.0 - alpha) * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
            let weight = (1.0 - alpha).powi(2) / ((1.0 - alpha_bar[t]) * alpha);
            sigma2.push(s2);
            iota.push(if s2 > 0.0 { weight / (2.0 * s2) } else { f64::INFINITY });
        }
        Ok(NoiseSchedule {
            betas,
            alpha_bar,
            sigma2,
            iota,
            sigma_samp: DEFAULT_SIGMA_SAMP,
        })
    }

    pub fn with_sigma_samp(mut self, sigma_samp: f64) -> Result<Self> {
        if !(sigma_samp > 0.0 && sigma_samp.is_finite()) {
            return Err(Error::config(format!("sigma_samp must be positive, got {sigma_samp}")));
        }
        self.sigma_samp = sigma_samp;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `prod_{s <= t} alpha_s`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Posterior variance of `q(x_{t-1} | x_t, x_0)`.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t - 1]
    }

    /// Denoising-loss weight of step `t`.
    pub fn iota(&self, t: usize) -> f64 {
        self.iota[t - 1]
    }

    /// Coefficient of the predicted noise in the reverse mean.
    pub fn noise_coef(&self, t: usize) -> f64 {
        (1.0 - self.alpha(t)) / (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// Reverse mean `(x_t - coef * s) / sqrt(alpha_t)`.
    pub fn reverse_mean(&self, t: usize, x_t: f64, noise_pred: f64) -> f64 {
        (x_t - self.noise_coef(t) * noise_pred) / self.alpha(t).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_step_hand_values() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert!((s.alpha(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha(2) - 0.8).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        assert_eq!(s.sigma2(1), 0.0);
        assert!((s.sigma2(2) - 0.2 * 0.1 / 0.28).abs() < 1e-12);
        assert!((s.sigma2(2) - 0.0714286).abs() < 1e-7);
        assert!((s.iota(2) - 1.25).abs() < 1e-12);
        assert!(s.iota(1).is_infinite());
    }

    #[test]
    fn constant_betas_are_geometric() {
        let s = NoiseSchedule::linear(6, 0.05, 0.05).unwrap();
        for t in 0..=6 {
            assert_eq!(s.alpha_bar(t), (0..t).fold(1.0, |acc, _| acc * 0.95));
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(4, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(4, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(4, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(4, 0.1, 0.2).unwrap().with_sigma_samp(0.0).is_err());
    }

    proptest! {
        #[test]
        fn schedule_identities(steps in 2usize..64, lo in 1e-4f64..0.3, span in 0.0f64..0.5) {
            let hi = (lo + span).min(0.95);
            let s = NoiseSchedule::linear(steps, lo, hi).unwrap();
            for t in 1..=steps {
                prop_assert!((s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)).abs() <= 1e-15);
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                let a = s.alpha(t);
                let s2 = (1.0 - a) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
                prop_assert_eq!(s.sigma2(t), s2);
                if t >= 2 {
                    let iota = (1.0 / (2.0 * s2)) * (1.0 - a).powi(2) / ((1.0 - s.alpha_bar(t)) * a);
                    prop_assert!(s.iota(t).is_finite());
                    prop_assert!((s.iota(t) - iota).abs() <= 1e-12 * iota.abs());
                }
            }
        }
    }
}
