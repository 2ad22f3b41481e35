//! The min-max solver: dual bookkeeping, the Lagrangian inner maximization
//! over a generative adversary, and the outer predictor loop.

mod adversary;
mod dual;
mod loss;
mod solver;

pub use adversary::{DiffusionAdversary, GenerativeAdversary, VaeAdversary, VaeSample};
pub use dual::DualState;
pub use loss::{forecast_loss, ForecastLoss, LossFn, SquaredDistance};
pub use solver::{
    descend, inner_max, lagrangian_objective, lagrangian_objective_graph, outer_min, ppo_term,
    surrogate_graph, EpochRecord, ObjectiveKind, Optimizer, OptimizerKind, OuterRecord, PpoConfig,
    SolverConfig, SolverReport,
};
