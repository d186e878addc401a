use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use tower::ServiceExt;

use salmon_lcm::dataio::{read_chains, read_risk_report, write_chains};
use salmon_lcm::forecast::RiskReport;
use salmon_service::{router, SessionSettings, SessionStore};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_salmon-lcm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    manifest: PathBuf,
    chains: PathBuf,
}

/// A simulated bundle and a short two-chain fit.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let manifest = PathBuf::from(
            ok(&run(&["simulate", "--seed", "7", "--out", p(&data)])).trim(),
        );
        let fit = dir.path().join("fit");
        let stdout = ok(&run(&[
            "fit", "--manifest", p(&manifest), "--chains", "2", "--burnin", "50", "--iters",
            "300", "--thin", "1", "--seed", "2", "--no-gate", "--out", p(&fit),
        ]));
        let chains = PathBuf::from(stdout.trim());
        assert!(chains.exists());
        assert!(fit.join("convergence.csv").exists());
        Fixture {
            dir,
            manifest,
            chains,
        }
    })
}

fn risk_into(out: &Path, extra: &[&str]) -> RiskReport {
    let f = fixture();
    let mut args = vec!["risk", p(&f.chains), "--manifest", p(&f.manifest), "--out", p(out)];
    args.extend_from_slice(extra);
    let stdout = ok(&run(&args));
    read_risk_report(Path::new(stdout.trim())).unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_values_are_usage_errors() {
    let f = fixture();
    let out = run(&["fit", "--manifest", p(&f.manifest), "--monitor", "theta9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta9"));
    let out = run(&["fit", "--manifest", p(&f.manifest), "--chains", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["risk", p(&f.chains), "--manifest", p(&f.manifest), "--horizon", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreadable_inputs_are_data_errors() {
    let f = fixture();
    let missing = f.dir.path().join("missing.json");
    assert_eq!(run(&["fit", "--manifest", p(&missing)]).status.code(), Some(3));
    let junk = f.dir.path().join("junk.bin");
    std::fs::write(&junk, b"garbage").unwrap();
    assert_eq!(run(&["diagnose", p(&junk)]).status.code(), Some(3));
    let out = run(&["risk", p(&junk), "--manifest", p(&f.manifest)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn short_fit_fails_the_gate_but_writes_outputs() {
    let f = fixture();
    let out_dir = f.dir.path().join("gate");
    let out = run(&[
        "fit", "--manifest", p(&f.manifest), "--chains", "2", "--burnin", "0", "--iters", "20",
        "--thin", "1", "--seed", "3", "--out", p(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("chains.bin").exists());
    assert!(out_dir.join("convergence.csv").exists());
}

#[test]
fn risk_grid_is_the_product_of_quota_lists() {
    let dir = tempfile::tempdir().unwrap();
    let r = risk_into(dir.path(), &["--grid", "0,50,100", "--grid-fa", "0,50", "--draws", "200"]);
    assert_eq!(r.scenarios.len(), 6);
    assert_eq!(r.n_draws, 200);
    let grids = std::fs::read_to_string(dir.path().join("risk_grids.csv")).unwrap();
    assert!(grids.lines().nth(1).unwrap().ends_with("wg_0,wg_50,wg_100"));
    assert!(dir.path().join("risk_report.csv").exists());
}

#[test]
fn diagnose_reports_one_on_identical_chains() {
    let f = fixture();
    let mut chains = read_chains(&f.chains).unwrap();
    chains.chains[1] = chains.chains[0].clone();
    let dup = f.dir.path().join("dup.bin");
    write_chains(&chains, &dup).unwrap();
    let stdout = ok(&run(&["diagnose", p(&dup)]));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(stdout.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "rhat").unwrap();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(rec[col].parse::<f64>().unwrap(), 1.0, "{}", &rec[0]);
        n += 1;
    }
    assert_eq!(n, chains.n_names());
}

#[test]
fn commands_are_deterministic_given_seed() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let read_dir = |d: &Path| {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&["simulate", "--seed", "7", "--out", p(&a)]));
    ok(&run(&["simulate", "--seed", "7", "--out", p(&b)]));
    assert_eq!(read_dir(&a), read_dir(&b));
    assert_eq!(read_dir(&a), read_dir(f.manifest.parent().unwrap()));

    let fit = |out: &Path| {
        ok(&run(&[
            "fit", "--manifest", p(&f.manifest), "--chains", "2", "--burnin", "5", "--iters",
            "20", "--thin", "2", "--seed", "9", "--no-gate", "--out", p(out),
        ]));
        std::fs::read(out.join("chains.bin")).unwrap()
    };
    assert_eq!(fit(&dir.path().join("fa")), fit(&dir.path().join("fb")));

    let args = ["--grid", "0,100", "--grid-fa", "50", "--draws", "100", "--seed", "4"];
    let (ra, rb) = (dir.path().join("ra"), dir.path().join("rb"));
    risk_into(&ra, &args);
    risk_into(&rb, &args);
    assert_eq!(read_dir(&ra), read_dir(&rb));
}

#[test]
fn forecast_and_report_write_tables() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&run(&[
        "forecast", p(&f.chains), "--manifest", p(&f.manifest), "--draws", "100", "--horizon",
        "3", "--grid", "100", "--out", p(dir.path()),
    ]));
    let table = std::fs::read_to_string(stdout.trim()).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("quantity,unit,year,median"));
    // 7 quantities, 3 units, 3 years
    assert_eq!(table.lines().count(), 2 + 7 * 3 * 3);

    let stdout = ok(&run(&["report", p(&f.chains), "--manifest", p(&f.manifest), "--out", p(dir.path())]));
    let written: Vec<&str> = stdout.lines().collect();
    for name in ["timeseries.csv", "csg_timeseries.csv", "correlation_rho3.csv", "correlation_rho4.csv"] {
        assert!(written.iter().any(|w| w.ends_with(name)), "{name}");
    }
    let corr = std::fs::read_to_string(dir.path().join("correlation_rho3.csv")).unwrap();
    let rows: Vec<&str> = corr.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<f64> = row.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells[i], 1.0);
        assert!(cells.iter().all(|c| (-1.0..=1.0).contains(c)));
    }
}

async fn fetch(store: &Arc<SessionStore>, req: Request<Body>) -> RiskReport {
    let resp = router(store.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&body).unwrap()
}

#[tokio::test]
async fn service_responses_equal_cli_risk_output() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cli = risk_into(dir.path(), &[]);
    assert_eq!(cli.scenarios.len(), 36);

    let store = Arc::new(SessionStore::load(&f.manifest, &f.chains, SessionSettings::default()).unwrap());
    let served = fetch(&store, Request::get("/api/scenario/grid").body(Body::empty()).unwrap()).await;
    assert_eq!(served, cli);

    for (wg, fa) in [(0.0, 0.0), (250.0, 250.0)] {
        let body = format!(r#"{{"wg_tonnes":{wg},"fa_tonnes":{fa}}}"#);
        let req = Request::post("/api/scenario")
            .header("content-type", "application/json")
            .body(Body::from(body))
            .unwrap();
        let one = fetch(&store, req).await;
        let cell = cli
            .scenarios
            .iter()
            .find(|s| s.wg_tonnes == wg && s.fa_tonnes == fa)
            .unwrap();
        assert_eq!(&one.scenarios[0], cell);
        assert_eq!((one.n_draws, one.horizon, &one.years), (cli.n_draws, cli.horizon, &cli.years));
    }
}
