use crate::error::{Error, Result};

/// Budget and search settings for the KL-DRO dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlDroConfig {
    pub eps_kl: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    /// Relative tolerance on `log α`.
    pub search_tol: f64,
}

impl KlDroConfig {
    pub fn new(eps_kl: f64) -> Self {
        KlDroConfig {
            eps_kl,
            alpha_lo: 1e-4,
            alpha_hi: 1e4,
            search_tol: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_kl > 0.0 && self.eps_kl.is_finite()) {
            return Err(Error::config(format!("KL budget must be > 0, got {}", self.eps_kl)));
        }
        if !(self.alpha_lo > 0.0 && self.alpha_lo < self.alpha_hi && self.alpha_hi.is_finite()) {
            return Err(Error::config("alpha bounds must satisfy 0 < lo < hi"));
        }
        if !(self.search_tol > 0.0) {
            return Err(Error::config("search tolerance must be positive"));
        }
        Ok(())
    }
}

/// Solution of the dual at one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct KlDual {
    pub value: f64,
    pub alpha: f64,
    /// Worst-case weights `∝ exp(f / α)`; the gradient of `value` in `f`.
    pub weights: Vec<f64>,
}

/// `α ε + α log Σ p exp(f / α)`, computed stably.
fn dual_value(f: &[f64], p: &[f64], max: f64, eps: f64, alpha: f64) -> f64 {
    let s: f64 = f.iter().zip(p).map(|(v, pi)| pi * ((v - max) / alpha).exp()).sum::<f64>();
    alpha * eps + max + alpha * s.ln()
}

fn tilt(f: &[f64], p: &[f64], max: f64, alpha: f64) -> Vec<f64> {
    let raw: Vec<f64> = f.iter().zip(p).map(|(v, pi)| pi * ((v - max) / alpha).exp()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / z).collect()
}

/// Minimizes the dual over `α` by golden-section search on `log α`,
/// widening the interval when the minimum sits on its upper end.
pub fn kl_dro_dual(f: &[f64], cfg: &KlDroConfig) -> Result<KlDual> {
    let uniform = vec![1.0 / f.len().max(1) as f64; f.len()];
    kl_dro_dual_weighted(f, &uniform, cfg)
}

/// Dual with nominal weights `p` (a probability vector with positive entries).
pub fn kl_dro_dual_weighted(f: &[f64], p: &[f64], cfg: &KlDroConfig) -> Result<KlDual> {
    cfg.validate()?;
    if f.is_empty() {
        return Err(Error::Empty("kl-dro batch"));
    }
    if f.len() != p.len() || p.iter().any(|&v| !(v > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("nominal weights must be a positive probability vector"));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kl-dro losses"));
    }
    let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let argmax_mass: f64 = f.iter().zip(p).filter(|(v, _)| **v == max).map(|(_, p)| p).sum();
    // As α → 0 the dual tends to max f; it is the infimum when the
    // derivative there, eps + ln P(argmax), is nonnegative.
    let at_zero_is_min = cfg.eps_kl + argmax_mass.ln() >= 0.0;
    if at_zero_is_min || f.iter().all(|&v| v == max) {
        let weights: Vec<f64> = f
            .iter()
            .zip(p)
            .map(|(&v, pi)| if v == max { pi / argmax_mass } else { 0.0 })
            .collect();
        return Ok(KlDual {
            value: max,
            alpha: 0.0,
            weights,
        });
    }
    let (mut lo, mut hi) = (cfg.alpha_lo.ln(), cfg.alpha_hi.ln());
    let h = |la: f64| dual_value(f, p, max, cfg.eps_kl, la.exp());
    for _ in 0..8 {
        let la = golden_section(&h, lo, hi, cfg.search_tol);
        let span = hi - lo;
        if la - lo < 1e-6 * span {
            lo -= span;
        } else if hi - la < 1e-6 * span {
            hi += span;
        } else {
            let alpha = la.exp();
            let value = h(la);
            if !value.is_finite() {
                return Err(Error::NonFinite("kl-dro dual"));
            }
            return Ok(KlDual {
                value,
                alpha,
                weights: tilt(f, p, max, alpha),
            });
        }
    }
    Err(Error::Search(format!(
        "no interior minimizer of the KL dual in alpha range [{:e}, {:e}]",
        lo.exp(),
        hi.exp()
    )))
}

fn golden_section(h: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (h(c), h(d));
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = h(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = h(d);
        }
    }
    (a + b) / 2.0
}

fn kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(qi, pi)| qi * (qi / pi).ln())
        .sum()
}

/// Worst-case expectation `max Σ q_i f_i` over `KL(q‖p) ≤ eps` by
/// exponential tilting with bisection on the temperature.
pub fn kl_dro_bruteforce(f: &[f64], p: &[f64], eps_kl: f64) -> Result<f64> {
    if f.is_empty() || f.len() != p.len() {
        return Err(Error::config("f and p must be nonempty and of equal length"));
    }
    if p.iter().any(|&v| !(v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("p is not a probability vector"));
    }
    if !(eps_kl >= 0.0) {
        return Err(Error::config("KL budget must be >= 0"));
    }
    let support: Vec<usize> = (0..f.len()).filter(|&i| p[i] > 0.0).collect();
    let fs: Vec<f64> = support.iter().map(|&i| f[i]).collect();
    let ps: Vec<f64> = support.iter().map(|&i| p[i]).collect();
    let mean: f64 = fs.iter().zip(&ps).map(|(a, b)| a * b).sum();
    let max = fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if eps_kl == 0.0 || fs.iter().all(|&v| v == max) {
        return Ok(mean);
    }
    let mass: f64 = fs.iter().zip(&ps).filter(|(v, _)| **v == max).map(|(_, p)| p).sum();
    if -mass.ln() <= eps_kl {
        return Ok(max);
    }
    // KL of the tilted distribution falls from -ln(mass) to 0 as α grows.
    let spread = max - fs.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = ((spread * 1e-12).ln(), (spread * 1e12).ln());
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let q = tilt(&fs, &ps, max, mid.exp());
        if kl(&q, &ps) > eps_kl {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = tilt(&fs, &ps, max, hi.exp());
    Ok(q.iter().zip(&fs).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits() {
        let f = [0.3, 1.2, 0.7, 2.0];
        let mean = f.iter().sum::<f64>() / 4.0;
        let small = kl_dro_dual(&f, &KlDroConfig::new(1e-9)).unwrap();
        assert!((small.value - mean).abs() < 1e-4, "{}", small.value);
        let big = kl_dro_dual(&f, &KlDroConfig::new(1e3)).unwrap();
        assert!((big.value - 2.0).abs() < 1e-3);
    }

    #[test]
    fn two_point_instance() {
        // oracle: max q s.t. q ln 2q + (1-q) ln 2(1-q) <= 0.1, by bisection
        let kl2 = |q: f64| q * (2.0 * q).ln() + (1.0 - q) * (2.0 * (1.0 - q)).ln();
        let (mut lo, mut hi) = (0.5f64, 1.0 - 1e-15);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if kl2(mid) <= 0.1 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 0.720).abs() < 1e-3);
        let dual = kl_dro_dual(&[0.0, 1.0], &KlDroConfig::new(0.1)).unwrap();
        assert!((dual.value - lo).abs() < 1e-4);
        assert!((kl_dro_bruteforce(&[0.0, 1.0], &[0.5, 0.5], 0.1).unwrap() - lo).abs() < 1e-9);
    }

    #[test]
    fn bruteforce_trivial_cases() {
        assert_eq!(kl_dro_bruteforce(&[1.0, 3.0], &[0.25, 0.75], 0.0).unwrap(), 2.5);
        assert_eq!(kl_dro_bruteforce(&[4.0, 4.0, 4.0], &[0.2, 0.3, 0.5], 0.7).unwrap(), 4.0);
        assert!(kl_dro_bruteforce(&[1.0, 2.0], &[0.6, 0.6], 0.1).is_err());
    }

    #[test]
    fn weights_are_a_distribution() {
        let d = kl_dro_dual(&[0.1, 0.5, 0.2], &KlDroConfig::new(0.2)).unwrap();
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.value >= (0.1 + 0.5 + 0.2) / 3.0);
    }
}
