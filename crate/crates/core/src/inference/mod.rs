//! Posterior sampling: chain initialisation, blocked adaptive Metropolis with
//! conjugate precision updates, and convergence diagnostics.

pub mod diagnostics;
pub mod init;
pub mod mcmc;
pub mod mh;
pub mod monitor;
pub mod summary;
pub mod wishart;

pub use diagnostics::{effective_sample_size, gelman_rubin, DiagnosticError, Ess, EssFlag};
pub use init::init_chain;
pub use mcmc::{config_fingerprint, monitor_names, run_mcmc, run_mcmc_from, ChainOutput, ChainRecord, McmcSettings};
pub use mh::{mh_update_block, AdaptiveMetropolis};
pub use monitor::MonitorGroup;
pub use summary::{
    convergence_table, max_rhat, posterior_summary, Convergence, QuantitySummary,
    DEFAULT_QUANTILES,
};
pub use wishart::{gibbs_update_precision, WishartError};

use crate::params::ParamError;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("invalid MCMC settings: {0}")]
    Settings(String),
    #[error("chain initialisation failed: {0}")]
    Init(String),
    #[error("non-finite log posterior in chain {chain} at iteration {iteration}, block {block}")]
    NonFinite {
        chain: usize,
        iteration: usize,
        block: String,
        /// Suspicious parameter values at the time of failure.
        values: Vec<(String, f64)>,
    },
    #[error(transparent)]
    Wishart(#[from] WishartError),
    #[error(transparent)]
    Param(#[from] ParamError),
}
