use crate::error::{Error, Result};

/// Empirical 1-D Wasserstein-1 distance between two scalar samples.
///
/// When the sizes differ, the larger sample is resampled to the smaller size
/// by linear interpolation of its sorted values.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein1 sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("wasserstein1 input"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let m = sa.len().min(sb.len());
    let qa = quantiles(&sa, m);
    let qb = quantiles(&sb, m);
    Ok(qa.iter().zip(&qb).map(|(x, y)| (x - y).abs()).sum::<f64>() / m as f64)
}

/// W₁ between two window sets, pooled over all values.
pub fn wasserstein1_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    wasserstein1(&a.concat(), &b.concat())
}

fn quantiles(sorted: &[f64], m: usize) -> Vec<f64> {
    let n = sorted.len();
    if n == m {
        return sorted.to_vec();
    }
    (0..m)
        .map(|k| {
            let pos = if m == 1 {
                (n - 1) as f64 / 2.0
            } else {
                k as f64 * (n - 1) as f64 / (m - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        })
        .collect()
}

/// Mean squared error between equal-length slices.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse", format!("{} predictions, {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse input"));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn hand_values() {
        assert_eq!(wasserstein1(&[0.0, 1.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(wasserstein1(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    #[test]
    fn unequal_sizes_use_quantiles() {
        // {0, 1, 2} resampled to 2 points: {0, 2}
        assert_eq!(wasserstein1(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[5.0], &[0.0, 1.0, 2.0]).unwrap(), 4.0);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0; 4], &[1.0; 4]).unwrap(), 1.0);
        assert!(mse(&[0.0], &[1.0, 2.0]).is_err());
        let mut rng = seeded(5);
        let p: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let t: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        // two-pass: differences first, then mean of squares
        let diffs: Vec<f64> = p.iter().zip(&t).map(|(a, b)| a - b).collect();
        let mut acc = 0.0;
        for d in &diffs {
            acc += d * d;
        }
        assert!((mse(&p, &t).unwrap() - acc / 50.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn translation(a in proptest::collection::vec(-10f64..10.0, 1..30), c in -5f64..5.0) {
            let b: Vec<f64> = a.iter().map(|x| x + c).collect();
            prop_assert!((wasserstein1(&a, &b).unwrap() - c.abs()).abs() < 1e-9);
        }

        #[test]
        fn symmetric(a in proptest::collection::vec(-10f64..10.0, 1..30), b in proptest::collection::vec(-10f64..10.0, 1..30)) {
            prop_assert_eq!(wasserstein1(&a, &b).unwrap(), wasserstein1(&b, &a).unwrap());
        }
    }
}
