//! Executable checks of the dual-descent inequality, the inner-maximization
//! bound on a solvable Gaussian family, and Moreau-envelope stationarity.

mod probes;
mod toy;

pub use probes::{
    check_dual_lemma, check_kl_duality, check_moreau_identity, check_theorem1, check_theorem2,
    check_toy_identities, dual_lemma_sides, estimate_moreau_grad, run_probe, theorem1_rows,
    theorem2_trace, trend_slope, MoreauProbe, ProbeReport, Theorem1Config, Theorem1Row,
    PROBE_NAMES,
};
pub use toy::{
    gaussian_kl, toy_grid_optimum, toy_inner_optimum, toy_phi, toy_recon, GaussianToy,
    GaussianToyAdversary,
};
