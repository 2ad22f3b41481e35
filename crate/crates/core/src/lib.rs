//! Distributionally robust optimization over generative ambiguity sets.
//!
//! The adversary is a likelihood-based generative model (a discrete-time
//! diffusion model or a Gaussian VAE) whose reconstruction loss on the
//! nominal data bounds how far it may drift. The solver alternates a
//! Lagrangian-relaxed, policy-gradient inner maximization over the generator
//! with gradient steps on a predictor.

pub mod baselines;
pub mod cli;
pub mod databench;
pub mod dro;
pub mod error;
pub mod genmodels;
pub mod numcore;
pub mod rng;
pub mod theoryverify;

pub use error::{Error, Result};
