//! Comparison methods: ERM, diffusion-augmented ERM, KL-DRO and
//! adversarial W-DRO.

mod kl;
mod train;

pub use kl::{kl_dro_bruteforce, kl_dro_dual, kl_dro_dual_weighted, KlDroConfig, KlDual};
pub use train::{
    kl_dro_loss, train_dml, train_erm, train_kldro, train_wdro, wdro_adversary, TrainConfig,
    WDroConfig,
};
