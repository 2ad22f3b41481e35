use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{BoundParams, Graph, MlpSpec, ParamVector, Tensor, Var};

/// Per-sample loss `f(w, x) >= 0` of a decision `w` on a data point `x`.
pub trait LossFn {
    /// Width of a data point `x`.
    fn sample_dim(&self) -> usize;

    fn init_params(&self, rng: &mut crate::rng::Rng) -> Result<ParamVector>;

    /// `f(w, x_i)` for every row of `x` (a `[n, sample_dim]` node), as `[n, 1]`.
    fn per_sample_graph(&self, g: &mut Graph, w: &BoundParams, x: Var) -> Result<Var>;

    fn per_sample(&self, w: &ParamVector, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = g.bind(w)?;
        let x = g.constant(self.batch(xs)?)?;
        let f = self.per_sample_graph(&mut g, &b, x)?;
        Ok(g.value(f).values().to_vec())
    }

    fn mean(&self, w: &ParamVector, xs: &[Vec<f64>]) -> Result<f64> {
        let f = self.per_sample(w, xs)?;
        Ok(f.iter().sum::<f64>() / f.len() as f64)
    }

    /// Mean loss over `xs`; adds its gradient into `w.grad`.
    fn mean_with_grad(&self, w: &mut ParamVector, xs: &[Vec<f64>]) -> Result<f64> {
        let mut g = Graph::new();
        let b = g.bind(w)?;
        let x = g.constant(self.batch(xs)?)?;
        let f = self.per_sample_graph(&mut g, &b, x)?;
        let l = g.mean(f)?;
        let v = g.value(l).item()?;
        g.backward(l)?.accumulate(&b, w)?;
        Ok(v)
    }

    fn batch(&self, xs: &[Vec<f64>]) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(Error::Empty("loss batch"));
        }
        let t = Tensor::from_rows(xs)?;
        if t.last_dim() != self.sample_dim() {
            return Err(Error::shape(
                "loss",
                format!("sample width {}, expected {}", t.last_dim(), self.sample_dim()),
            ));
        }
        Ok(t)
    }
}

/// MSE of an MLP forecast of the last `l_out` values from the first `l_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastLoss {
    pub spec: MlpSpec,
    pub l_in: usize,
    pub l_out: usize,
}

impl ForecastLoss {
    pub fn new(spec: MlpSpec, l_in: usize, l_out: usize) -> Result<Self> {
        if spec.input_width() != l_in || spec.output_width() != l_out {
            return Err(Error::shape(
                "forecast_loss",
                format!(
                    "predictor {}->{} does not match window split {l_in}+{l_out}",
                    spec.input_width(),
                    spec.output_width()
                ),
            ));
        }
        Ok(ForecastLoss { spec, l_in, l_out })
    }

    /// Predictions for the input heads of `windows`.
    pub fn predict(&self, w: &ParamVector, windows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let heads: Vec<&[f64]> = windows.iter().map(|x| &x[..self.l_in.min(x.len())]).collect();
        Ok(self.spec.eval(w, "", &Tensor::from_rows(&heads)?)?.to_rows())
    }
}

impl LossFn for ForecastLoss {
    fn sample_dim(&self) -> usize {
        self.l_in + self.l_out
    }

    fn init_params(&self, rng: &mut crate::rng::Rng) -> Result<ParamVector> {
        self.spec.init(rng)
    }

    fn per_sample_graph(&self, g: &mut Graph, w: &BoundParams, x: Var) -> Result<Var> {
        let head = g.slice_cols(x, 0, self.l_in)?;
        let tail = g.slice_cols(x, self.l_in, self.l_in + self.l_out)?;
        let pred = self.spec.forward(g, w, "", head)?;
        let d = g.sub(pred, tail)?;
        let sq = g.square(d)?;
        let rows = g.sum_cols(sq)?;
        g.scale(rows, 1.0 / self.l_out as f64)
    }
}

/// `f(w, x) = ‖x − w‖²` with `w` a point of the same width.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredDistance {
    pub dim: usize,
}

impl LossFn for SquaredDistance {
    fn sample_dim(&self) -> usize {
        self.dim
    }

    fn init_params(&self, rng: &mut crate::rng::Rng) -> Result<ParamVector> {
        let mut p = ParamVector::new();
        p.push("w", vec![self.dim], (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        Ok(p)
    }

    fn per_sample_graph(&self, g: &mut Graph, w: &BoundParams, x: Var) -> Result<Var> {
        let wv = w.get("w")?;
        let neg = g.scale(wv, -1.0)?;
        let d = g.add_row(x, neg)?;
        let sq = g.square(d)?;
        g.sum_cols(sq)
    }
}

/// Convenience: mean forecast MSE of `w` on `windows`.
pub fn forecast_loss(loss: &ForecastLoss, w: &ParamVector, windows: &[Vec<f64>]) -> Result<f64> {
    loss.mean(w, windows)
}
