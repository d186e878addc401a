use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use salmon_lcm::dataio::synthetic::{desk_config, generate_synthetic, ObsNoiseSpec};
use salmon_lcm::dataio::{write_bundle, write_chains};
use salmon_lcm::forecast::{scenario_grid, RiskEngine, RiskReport, DEFAULT_GRID};
use salmon_lcm::inference::{run_mcmc, McmcSettings};
use salmon_service::{router, Problem, ServiceError, SessionSettings, SessionStore};

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: PathBuf,
    chains: PathBuf,
    store: Arc<SessionStore>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (bundle, _) =
            generate_synthetic(&desk_config(), 4, &ObsNoiseSpec::default(), &mut rng).unwrap();
        let manifest = write_bundle(&bundle, dir.path()).unwrap();
        let settings = McmcSettings {
            n_chains: 2,
            n_burnin: 100,
            n_iterations: 1000,
            thin: 1,
            seed: 5,
            ..McmcSettings::default()
        };
        let out = run_mcmc(&bundle.config, &bundle.obs, &settings).unwrap();
        let chains = dir.path().join("chains.bin");
        write_chains(&out, &chains).unwrap();
        let store = SessionStore::load(&manifest, &chains, SessionSettings::default()).unwrap();
        Fixture {
            _dir: dir,
            manifest,
            chains,
            store: Arc::new(store),
        }
    })
}

async fn send(req: Request<Body>) -> (StatusCode, String, Vec<u8>) {
    let resp = router(fixture().store.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, ctype, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: &str) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn problem(status: StatusCode, ctype: &str, body: &[u8]) -> Problem {
    assert_eq!(ctype, "application/problem+json");
    let p: Problem = serde_json::from_slice(body).unwrap();
    assert_eq!(p.status, status.as_u16());
    p
}

#[tokio::test]
async fn meta_lists_dimensions_units_and_grid() {
    let (status, _, body) = send(get("/api/meta")).await;
    assert_eq!(status, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["n_su"], 3);
    assert_eq!(v["n_years"], 20);
    assert_eq!(v["stock_units"].as_array().unwrap().len(), 3);
    assert!(!v["management_units"].as_array().unwrap().is_empty());
    assert_eq!(v["grid"]["wg_tonnes"].as_array().unwrap().len(), 6);
    assert_eq!(v["n_draws"], 2000);
}

#[tokio::test]
async fn summaries_cover_survival_maturation_and_correlation() {
    let (status, _, body) = send(get("/api/posterior/summaries")).await;
    assert_eq!(status, StatusCode::OK);
    let v: Vec<serde_json::Value> = serde_json::from_slice(&body).unwrap();
    for prefix in ["theta3[", "theta4[", "rho3[", "rho4["] {
        assert!(
            v.iter().any(|q| q["name"].as_str().unwrap().starts_with(prefix)),
            "{prefix}"
        );
    }
}

#[tokio::test]
async fn scenario_returns_probabilities_in_unit_interval() {
    let (status, ctype, body) =
        send(post("/api/scenario", r#"{"wg_tonnes":0,"fa_tonnes":0,"horizon":5}"#)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    assert_eq!(ctype, "application/json");
    let r: RiskReport = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.horizon, 5);
    assert_eq!(r.scenarios.len(), 1);
    for u in &r.scenarios[0].units {
        assert_eq!(u.probability.len(), 5);
        assert!(u.probability.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[tokio::test]
async fn repeated_scenario_is_byte_identical() {
    let req = r#"{"wg_tonnes":75,"fa_tonnes":20,"horizon":3}"#;
    let (_, _, a) = send(post("/api/scenario", req)).await;
    let (_, _, b) = send(post("/api/scenario", req)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn negative_tonnes_is_a_validation_error() {
    let (status, ctype, body) =
        send(post("/api/scenario", r#"{"wg_tonnes":-5,"fa_tonnes":0,"horizon":5}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let p = problem(status, &ctype, &body);
    assert!(p.detail.contains("wg_tonnes"), "{}", p.detail);
}

#[tokio::test]
async fn malformed_requests_are_bad_requests() {
    for body in [
        r#"{"wg_tonnes":0}"#,
        r#"{"wg_tonnes":0,"fa_tonnes":0,"horizon":5,"extra":1}"#,
        r#"{"wg_tonnes":0,"fa_tonnes":0,"horizon":0}"#,
        r#"{"wg_tonnes":0,"fa_tonnes":0,"horizon":1000}"#,
        "not json",
    ] {
        let (status, ctype, b) = send(post("/api/scenario", body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        problem(status, &ctype, &b);
    }
    for uri in [
        "/api/scenario/grid?wg=0,-1",
        "/api/scenario/grid?wg=abc",
        "/api/scenario/grid?horizon=x",
        "/api/scenario/grid?quota=3",
    ] {
        let (status, ctype, b) = send(get(uri)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        problem(status, &ctype, &b);
    }
}

#[tokio::test]
async fn unknown_endpoint_is_not_found() {
    let (status, ctype, body) = send(get("/api/nothing")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    problem(status, &ctype, &body);
}

#[tokio::test]
async fn default_grid_matches_engine_report() {
    let (status, _, body) = send(get("/api/scenario/grid")).await;
    assert_eq!(status, StatusCode::OK);
    let served: RiskReport = serde_json::from_slice(&body).unwrap();
    assert_eq!(served.scenarios.len(), 36);

    let f = fixture();
    let bundle = salmon_lcm::dataio::load_bundle(&f.manifest).unwrap();
    let chains = salmon_lcm::dataio::read_chains(&f.chains).unwrap();
    let s = SessionSettings::default();
    let engine =
        RiskEngine::from_chains(&bundle.config, &bundle.obs, &chains, s.working_set, s.seed, s.basis)
            .unwrap();
    let grid = scenario_grid(&DEFAULT_GRID, &DEFAULT_GRID, &bundle.scenario(0.0, 0.0, 5));
    let direct = engine.report(&grid).unwrap();
    assert_eq!(served, direct);
    assert_eq!(body, serde_json::to_vec(&direct).unwrap());
}

#[tokio::test]
async fn grid_cells_equal_single_scenarios_in_any_order() {
    let (_, _, body) = send(get("/api/scenario/grid?wg=0,150&fa=50,250&horizon=4")).await;
    let grid: RiskReport = serde_json::from_slice(&body).unwrap();
    assert_eq!(grid.scenarios.len(), 4);
    for sc in grid.scenarios.iter().rev() {
        let req = format!(
            r#"{{"wg_tonnes":{},"fa_tonnes":{},"horizon":4}}"#,
            sc.wg_tonnes, sc.fa_tonnes
        );
        let (_, _, b) = send(post("/api/scenario", &req)).await;
        let one: RiskReport = serde_json::from_slice(&b).unwrap();
        assert_eq!(&one.scenarios[0], sc);
    }
    assert_eq!((grid.scenarios[1].wg_tonnes, grid.scenarios[1].fa_tonnes), (150.0, 50.0));
}

#[test]
fn scenario_evaluation_is_interactive_at_2000_draws() {
    let store = &fixture().store;
    assert_eq!(store.n_draws(), 2000);
    let t = Instant::now();
    store.scenario(123.0, 45.0, 5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 5.0, "{secs} s");
}

#[tokio::test]
async fn busy_port_fails_at_startup() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap();
    let err = salmon_service::bind(addr).await.unwrap_err();
    assert!(matches!(err, ServiceError::Bind { .. }));
}

#[test]
fn bad_chains_fail_at_startup() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not chains").unwrap();
    let err = SessionStore::load(&f.manifest, &junk, SessionSettings::default()).err().unwrap();
    assert!(matches!(err, ServiceError::Data(_)));

    let mut other = desk_config();
    other.homewater_cv = 0.07;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (b, _) = generate_synthetic(&other, 4, &ObsNoiseSpec::default(), &mut rng).unwrap();
    let chains = salmon_lcm::dataio::read_chains(&f.chains).unwrap();
    let err = SessionStore::new(b, &chains, SessionSettings::default()).err().unwrap();
    assert!(matches!(
        err,
        ServiceError::Forecast(salmon_lcm::forecast::ForecastError::ConfigMismatch)
    ));
}
