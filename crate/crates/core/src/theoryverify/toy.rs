use crate::dro::GenerativeAdversary;
use crate::error::{Error, Result};
use crate::numcore::{BoundParams, Graph, ParamVector, Tensor, Var};
use crate::rng::{self, Rng};

/// `P_θ = N(θ, 1)` against nominal `N(0, 1)`, with `f(w, x) = (x − w)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianToy {
    pub w: f64,
    pub eps: f64,
}

impl GaussianToy {
    pub fn new(w: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) || !w.is_finite() {
            return Err(Error::config("toy needs finite w and eps > 0"));
        }
        Ok(GaussianToy { w, eps })
    }

    /// `E_{N(θ,1)}[(x − w)²]`.
    pub fn risk(&self, theta: f64) -> f64 {
        (theta - self.w).powi(2) + 1.0
    }
}

/// Entropy-normalized reconstruction loss, `½θ²`.
pub fn toy_recon(theta: f64) -> f64 {
    0.5 * theta * theta
}

/// `KL(N(m1, s1²) ‖ N(m2, s2²))`.
pub fn gaussian_kl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    (s2 / s1).ln() + (s1 * s1 + (m1 - m2).powi(2)) / (2.0 * s2 * s2) - 0.5
}

/// Closed-form `max_θ E[(x − w)²]` subject to `½θ² ≤ ε`.
pub fn toy_inner_optimum(toy: &GaussianToy) -> (f64, f64) {
    let r = (2.0 * toy.eps).sqrt();
    let theta = if toy.w > 0.0 { -r } else { r };
    (theta, (toy.w.abs() + r).powi(2) + 1.0)
}

/// Grid search over the feasible interval, as an independent check.
pub fn toy_grid_optimum(toy: &GaussianToy, points: usize) -> (f64, f64) {
    let r = (2.0 * toy.eps).sqrt();
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..points.max(2) {
        let th = -r + 2.0 * r * i as f64 / (points.max(2) - 1) as f64;
        let v = toy.risk(th);
        if v > best.1 {
            best = (th, v);
        }
    }
    best
}

/// Inner-max value function `φ(w) = (|w| + √(2ε))² + 1`.
pub fn toy_phi(w: f64, eps: f64) -> f64 {
    (w.abs() + (2.0 * eps).sqrt()).powi(2) + 1.0
}

/// The toy's location parameter as a generative adversary.
#[derive(Debug, Clone)]
pub struct GaussianToyAdversary {
    pub params: ParamVector,
}

impl GaussianToyAdversary {
    pub fn new(theta: f64) -> Self {
        let mut params = ParamVector::new();
        params.push("theta", vec![1], vec![theta]).expect("fresh vector");
        GaussianToyAdversary { params }
    }

    pub fn theta(&self) -> f64 {
        self.params.values()[0]
    }
}

impl GenerativeAdversary for GaussianToyAdversary {
    type Sample = Vec<f64>;

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn draw(&self, params: &ParamVector, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let th = params.values()[0];
        Ok((0..n).map(|_| vec![th + rng::normal(rng)]).collect())
    }

    fn point<'a>(&self, s: &'a Vec<f64>) -> &'a [f64] {
        s
    }

    fn log_prob_graph(&self, g: &mut Graph, bound: &BoundParams, samples: &[Vec<f64>]) -> Result<Var> {
        let x = g.constant(Tensor::from_rows(samples)?)?;
        let th = bound.get("theta")?;
        let neg = g.scale(th, -1.0)?;
        let d = g.add_row(x, neg)?;
        let sq = g.square(d)?;
        g.scale(sq, -0.5)
    }

    fn recon_graph(&self, g: &mut Graph, bound: &BoundParams, _rng: &mut Rng) -> Result<Var> {
        let th = bound.get("theta")?;
        let sq = g.square(th)?;
        let s = g.sum(sq)?;
        g.scale(s, 0.5)
    }

    fn constraint(&self, params: &ParamVector) -> Result<f64> {
        Ok(toy_recon(params.values()[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimum_hand_values() {
        let (th, v) = toy_inner_optimum(&GaussianToy::new(0.0, 0.5).unwrap());
        assert_eq!(th.abs(), 1.0);
        assert!((v - 2.0).abs() < 1e-12);
        let (th, v) = toy_inner_optimum(&GaussianToy::new(1.0, 0.5).unwrap());
        assert_eq!(th, -1.0);
        assert!((v - 5.0).abs() < 1e-12);
        let (_, v) = toy_inner_optimum(&GaussianToy::new(0.7, 1e-12).unwrap());
        assert!((v - (0.49 + 1.0)).abs() < 1e-5);
    }

    #[test]
    fn grid_agrees_with_closed_form() {
        for (w, eps) in [(0.0, 0.5), (1.0, 0.5), (-2.0, 0.1), (0.3, 2.0)] {
            let toy = GaussianToy::new(w, eps).unwrap();
            let (_, v) = toy_inner_optimum(&toy);
            let (_, g) = toy_grid_optimum(&toy, 10_001);
            assert!((v - g).abs() < 1e-9, "{w} {eps}");
        }
    }

    #[test]
    fn recon_equals_kl() {
        for th in [-3.0, -0.2, 0.0, 0.5, 2.5] {
            assert!((toy_recon(th) - gaussian_kl(0.0, 1.0, th, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn adversary_log_prob_gradient() {
        let adv = GaussianToyAdversary::new(0.4);
        let mut p = adv.params.clone();
        let xs = vec![vec![1.0], vec![-0.5]];
        let mut g = Graph::new();
        let b = g.bind(&p).unwrap();
        let lp = adv.log_prob_graph(&mut g, &b, &xs).unwrap();
        let s = g.sum(lp).unwrap();
        g.backward(s).unwrap().accumulate(&b, &mut p).unwrap();
        // d/dθ Σ −(x−θ)²/2 = Σ (x − θ)
        assert!((p.grad()[0] - ((1.0 - 0.4) + (-0.5 - 0.4))).abs() < 1e-12);
    }
}
