use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{matmul_raw, BoundParams, Graph, Var};
use super::params::ParamVector;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::config(format!("unknown activation {other}"))),
        }
    }
}

/// Fully connected network layout: `layer_widths[0]` inputs, last entry outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 || layer_widths.contains(&0) {
            return Err(Error::config(format!(
                "mlp needs at least two positive widths, got {layer_widths:?}"
            )));
        }
        Ok(MlpSpec {
            layer_widths,
            activation,
        })
    }

    /// Weights plus biases over all layers.
    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    fn layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn weight_name(prefix: &str, i: usize) -> String {
        format!("{prefix}l{i}.weight")
    }

    fn bias_name(prefix: &str, i: usize) -> String {
        format!("{prefix}l{i}.bias")
    }

    /// Appends Xavier-initialised weights and zero biases to `params`,
    /// with segment names prefixed by `prefix`.
    pub fn init_into<R: Rng + ?Sized>(
        &self,
        prefix: &str,
        params: &mut ParamVector,
        rng: &mut R,
    ) -> Result<()> {
        for i in 0..self.layers() {
            let (fan_in, fan_out) = (self.layer_widths[i], self.layer_widths[i + 1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            params.push(Self::weight_name(prefix, i), vec![fan_in, fan_out], w)?;
            params.push(Self::bias_name(prefix, i), vec![fan_out], vec![0.0; fan_out])?;
        }
        Ok(())
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamVector> {
        let mut p = ParamVector::new();
        self.init_into("", &mut p, rng)?;
        Ok(p)
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::shape(
                "mlp_forward",
                format!("input width {width}, network expects {}", self.input_width()),
            ));
        }
        Ok(())
    }

    /// Records the forward pass on `g`.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, prefix: &str, input: Var) -> Result<Var> {
        self.check_input(g.value(input).last_dim())?;
        let mut h = input;
        for i in 0..self.layers() {
            let w = bound.get(&Self::weight_name(prefix, i))?;
            let b = bound.get(&Self::bias_name(prefix, i))?;
            h = g.matmul(h, w)?;
            h = g.add_row(h, b)?;
            if i + 1 < self.layers() {
                h = match self.activation {
                    Activation::Tanh => g.tanh(h)?,
                    Activation::Relu => g.relu(h)?,
                    Activation::Identity => h,
                };
            }
        }
        Ok(h)
    }

    /// Forward pass without recording, for sampling and evaluation.
    pub fn eval(&self, params: &ParamVector, prefix: &str, input: &Tensor) -> Result<Tensor> {
        self.check_input(input.last_dim())?;
        let n = input.rows();
        let mut h = input.values().to_vec();
        for i in 0..self.layers() {
            let (k, m) = (self.layer_widths[i], self.layer_widths[i + 1]);
            let missing = || Error::config(format!("missing layer {i} in parameters"));
            let w = params
                .segment_values(&Self::weight_name(prefix, i))
                .ok_or_else(missing)?;
            let b = params
                .segment_values(&Self::bias_name(prefix, i))
                .ok_or_else(missing)?;
            if w.len() != k * m || b.len() != m {
                return Err(Error::shape("mlp_forward", format!("layer {i} parameter size")));
            }
            let mut out = matmul_raw(&h, w, n, k, m);
            let last = i + 1 == self.layers();
            for row in out.chunks_mut(m) {
                for (o, bv) in row.iter_mut().zip(b) {
                    *o += bv;
                    if !last {
                        *o = self.activation.apply(*o);
                    }
                }
            }
            h = out;
        }
        let out = Tensor::new(vec![n, self.output_width()], h)?;
        out.check_finite("mlp_forward")
    }
}
