use super::params::ParamVector;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(lr: f64, len: usize) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8, len)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64, len: usize) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from `params.grad` (descent direction) and zeroes it.
    pub fn step(&mut self, params: &mut ParamVector) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("state for {} values, params have {}", self.m.len(), params.len()),
            ));
        }
        if params.grad().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam_step gradient"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let grad = params.grad().to_vec();
        let values = params.values_mut();
        for i in 0..values.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            values[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        params.zero_grad();
        Ok(())
    }
}

/// Plain gradient descent: `values -= lr * grad`, then zero the gradient.
pub fn sgd_step(lr: f64, params: &mut ParamVector) -> Result<()> {
    if params.grad().iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("sgd_step gradient"));
    }
    let grad = params.grad().to_vec();
    for (v, g) in params.values_mut().iter_mut().zip(grad) {
        *v -= lr * g;
    }
    params.zero_grad();
    Ok(())
}
