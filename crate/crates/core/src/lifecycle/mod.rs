//! The stochastic forward process model.

mod reconstruct;
mod state;
pub mod transitions;

pub use reconstruct::{
    reconstruct, reconstruct_su, reconstruct_su_anchored, simulate_forward, Anchors, ProcessPlan,
    SuPlan,
};
pub use state::{FisheryNode, LatentState, SuState};
pub use transitions::{
    apply_fishery, apply_natural_mortality, compute_eggs, compute_spawners,
    correlation_from_covariance, draw_smolt_age_split, draw_smolt_cohort, split_maturation,
    step_random_walk, survive_to_pfa, SpawnerInputs,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LifecycleError {
    #[error("matrix is not square")]
    NotSquare,
    #[error("covariance matrix is not positive semi-definite")]
    NotPsd,
    #[error("variance at index {0} is not strictly positive")]
    NonPositiveVariance(usize),
    #[error("{what} has dimension {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}
