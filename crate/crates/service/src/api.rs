use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use salmon_lcm::forecast::{ForecastError, DEFAULT_GRID};

use crate::store::{SessionStore, MAX_GRID_VALUES, MAX_HORIZON};
use crate::ServiceError;

/// Problem-detail error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    #[serde(rename = "type")]
    pub kind: String,
    pub title: String,
    pub status: u16,
    pub detail: String,
}

impl Problem {
    pub fn new(status: StatusCode, detail: impl Into<String>) -> Self {
        Self {
            kind: "about:blank".into(),
            title: status.canonical_reason().unwrap_or("Error").into(),
            status: status.as_u16(),
            detail: detail.into(),
        }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, detail)
    }
}

impl IntoResponse for Problem {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = serde_json::to_vec(&self).expect("serializable");
        (
            status,
            [(header::CONTENT_TYPE, "application/problem+json")],
            body,
        )
            .into_response()
    }
}

impl From<ServiceError> for Problem {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Forecast(ForecastError::InvalidScenario(m)) => Problem::bad_request(m),
            other => {
                log::error!("{other}");
                Problem::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRequest {
    pub wg_tonnes: f64,
    pub fa_tonnes: f64,
    #[serde(default)]
    pub horizon: Option<usize>,
}

type ApiResult = Result<Response, Problem>;

fn json<T: Serialize>(value: &T) -> Response {
    let body = serde_json::to_vec(value).expect("serializable");
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn check_tonnes(name: &str, v: f64) -> Result<f64, Problem> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Problem::bad_request(format!(
            "{name} must be a finite non-negative number of tonnes, got {v}"
        )))
    }
}

fn check_horizon(store: &SessionStore, h: Option<usize>) -> Result<usize, Problem> {
    let h = h.unwrap_or(store.settings().default_horizon);
    if (1..=MAX_HORIZON).contains(&h) {
        Ok(h)
    } else {
        Err(Problem::bad_request(format!(
            "horizon must lie in 1..={MAX_HORIZON}, got {h}"
        )))
    }
}

fn parse_list(name: &str, raw: Option<&String>) -> Result<Vec<f64>, Problem> {
    let Some(raw) = raw else {
        return Ok(DEFAULT_GRID.to_vec());
    };
    let values = raw
        .split(',')
        .map(|s| {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Problem::bad_request(format!("{name}: '{s}' is not a number")))?;
            check_tonnes(name, v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() > MAX_GRID_VALUES {
        return Err(Problem::bad_request(format!(
            "{name}: at most {MAX_GRID_VALUES} values, got {}",
            values.len()
        )));
    }
    Ok(values)
}

async fn blocking<T, F>(f: F) -> Result<T, Problem>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Problem::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(Problem::from)
}

async fn meta(State(store): State<Arc<SessionStore>>) -> Response {
    json(&store.meta_json())
}

async fn summaries(State(store): State<Arc<SessionStore>>) -> Response {
    json(&store.summaries())
}

async fn scenario(
    State(store): State<Arc<SessionStore>>,
    body: Result<Json<ScenarioRequest>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body.map_err(|e| Problem::bad_request(e.body_text()))?;
    let wg = check_tonnes("wg_tonnes", req.wg_tonnes)?;
    let fa = check_tonnes("fa_tonnes", req.fa_tonnes)?;
    let horizon = check_horizon(&store, req.horizon)?;
    let report = blocking(move || store.scenario(wg, fa, horizon)).await?;
    Ok(json(&report))
}

async fn grid(
    State(store): State<Arc<SessionStore>>,
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> ApiResult {
    let Query(q) = query.map_err(|e| Problem::bad_request(e.body_text()))?;
    if let Some(k) = q.keys().find(|k| !["wg", "fa", "horizon"].contains(&k.as_str())) {
        return Err(Problem::bad_request(format!("unknown query parameter '{k}'")));
    }
    let wg = parse_list("wg", q.get("wg"))?;
    let fa = parse_list("fa", q.get("fa"))?;
    let horizon = match q.get("horizon") {
        Some(h) => Some(
            h.trim()
                .parse()
                .map_err(|_| Problem::bad_request(format!("horizon: '{h}' is not a count")))?,
        ),
        None => None,
    };
    let horizon = check_horizon(&store, horizon)?;
    let report = blocking(move || store.grid(&wg, &fa, horizon)).await?;
    Ok(json(&report))
}

async fn not_found() -> Problem {
    Problem::new(StatusCode::NOT_FOUND, "no such endpoint")
}

async fn method_not_allowed() -> Problem {
    Problem::new(StatusCode::METHOD_NOT_ALLOWED, "method not allowed on this endpoint")
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/posterior/summaries", get(summaries))
        .route("/api/scenario", post(scenario))
        .route("/api/scenario/grid", get(grid))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(store)
}
