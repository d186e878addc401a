//! Scenario forecasting and conservation-limit risk analysis.
//!
//! Posterior draws are projected forward with the same life cycle, except
//! that fisheries under a quota remove fixed numbers of fish (truncated to
//! what is available) and every other distant fishery takes nothing.

mod boundary;
mod engine;
mod risk;
mod scenario;

pub use boundary::{Boundary, SuBoundary};
pub use engine::{
    forecast_trajectory, project, ForecastContext, ForecastNoise, ForecastTrajectory,
};
pub use risk::{
    compute_risk, CsgRisk, EggBasis, RiskEngine, RiskReport, ScenarioRisk, UnitRisk,
    RISK_SCHEMA_VERSION,
};
pub use scenario::{
    apply_sharing_fraction, fishery_targets, scenario_grid, tonnes_to_fish, CatchScenario,
    FrozenInputs, MeanWeights, SharingFraction, DEFAULT_GRID, RECENT_YEARS,
};

use crate::lifecycle::LifecycleError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ForecastError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no mean weight for quota fishery {0}")]
    MissingMeanWeight(String),
    #[error("forecast boundary incomplete: {}", .0.join("; "))]
    IncompleteBoundary(Vec<String>),
    #[error("forecast boundary must cover {n_su} stock units")]
    BoundaryShape { n_su: usize },
    #[error("flattened boundary has {got} values, expected {expected}")]
    BoundaryLength { expected: usize, got: usize },
    #[error("chains were fitted to a different configuration")]
    ConfigMismatch,
    #[error("no posterior draws")]
    NoDraws,
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}
