//! Likelihood-based generative models: a discrete-time diffusion model and a
//! Gaussian VAE.

mod diffusion;
mod schedule;
mod vae;

pub use diffusion::{
    forward_sample, time_embedding, weighted_noise_error, DenoisingObjective, DiffusionModel, DmDraws, StepSampling,
    Trajectory, TIME_EMBED_DIM,
};
pub use schedule::{NoiseSchedule, DEFAULT_SIGMA_SAMP, MIN_STEP_STD};
pub use vae::{latent_perturb, VaeDraws, VaeModel, DEFAULT_DECODER_VAR};
