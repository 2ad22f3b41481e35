use crate::error::{Error, Result};

/// Lagrange multiplier for the reconstruction-loss constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualState {
    pub mu: f64,
    pub eta: f64,
    pub eps: f64,
}

impl DualState {
    pub fn new(mu: f64, eta: f64, eps: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::config(format!("mu must be >= 0, got {mu}")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::config(format!("eta must be > 0, got {eta}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::config(format!("eps must be > 0, got {eps}")));
        }
        Ok(DualState { mu, eta, eps })
    }

    /// Constraint slack `eps - j_hat`.
    pub fn slack(&self, j_hat: f64) -> f64 {
        self.eps - j_hat
    }

    /// `mu <- max(mu - eta * (eps - j_hat), 0)`.
    pub fn dual_update(&mut self, j_hat: f64) -> Result<()> {
        if !j_hat.is_finite() {
            return Err(Error::NonFinite("dual_update constraint value"));
        }
        self.mu = (self.mu - self.eta * self.slack(j_hat)).max(0.0);
        Ok(())
    }
}
