//! JSON HTTP service over an immutable posterior sample and the risk engine.
//!
//! Endpoints:
//!
//! - `GET /api/meta`
//! - `GET /api/posterior/summaries`
//! - `POST /api/scenario` with `{"wg_tonnes", "fa_tonnes", "horizon"}`
//! - `GET /api/scenario/grid?wg=0,50&fa=0,50&horizon=5`
//!
//! Errors are problem-detail objects (`application/problem+json`).

mod api;
mod store;

pub use api::{router, Problem, ScenarioRequest};
pub use store::{SessionSettings, SessionStore, MAX_GRID_VALUES, MAX_HORIZON};

use std::net::SocketAddr;
use std::sync::Arc;

use salmon_lcm::dataio::DataError;
use salmon_lcm::forecast::ForecastError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Serve(#[source] std::io::Error),
}

/// Bind the listening socket. Failing here, before any request is served,
/// is the startup failure for a busy port.
pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServiceError> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })
}

/// Serve `store` on an already bound listener until the process stops.
pub async fn serve(
    store: Arc<SessionStore>,
    listener: tokio::net::TcpListener,
) -> Result<(), ServiceError> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("serving {} draws on http://{addr}", store.n_draws());
    }
    axum::serve(listener, router(store))
        .await
        .map_err(ServiceError::Serve)
}
