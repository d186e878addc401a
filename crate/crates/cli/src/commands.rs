use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use salmon_lcm::dataio::synthetic::{desk_config, generate_synthetic, truth_logits, ObsNoiseSpec};
use salmon_lcm::dataio::{
    load_bundle, read_chains, summaries_csv, write_atomic, write_bundle, write_chains,
    write_risk_report, write_summaries, DatasetBundle,
};
use salmon_lcm::forecast::{scenario_grid, EggBasis, RiskEngine};
use salmon_lcm::inference::{
    config_fingerprint, convergence_table, max_rhat, posterior_summary, run_mcmc, McmcSettings,
    MonitorGroup, DEFAULT_QUANTILES,
};
use salmon_service::{SessionSettings, SessionStore};

use crate::tables;
use crate::{
    Command, DiagnoseArgs, FitArgs, ForecastArgs, GateFailed, PosteriorArgs, ReportArgs, RiskArgs,
    ServeArgs, SimulateArgs, UsageError, RHAT_GATE,
};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Forecast(a) => forecast(a),
        Command::Risk(a) => risk(a),
        Command::Serve(a) => serve(a),
        Command::Report(a) => report(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load(manifest: &Path) -> Result<DatasetBundle> {
    let bundle = load_bundle(manifest)?;
    for w in &bundle.warnings {
        log::warn!("{w}");
    }
    Ok(bundle)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let config = match &a.manifest {
        Some(m) => load(m)?.config,
        None => desk_config(),
    };
    let noise = if a.exact {
        ObsNoiseSpec::exact()
    } else {
        ObsNoiseSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    rng.set_stream(1);
    let (bundle, truth) = generate_synthetic(&config, a.seed, &noise, &mut rng)?;
    let manifest = write_bundle(&bundle, &a.out)?;
    let [th3, th4] = truth_logits(&truth);
    let labels: Vec<&str> = bundle.config.stock_units.iter().map(|s| s.label.as_str()).collect();
    let truth_json = serde_json::json!({
        "first_year": bundle.config.first_year,
        "units": labels,
        "logit_theta3": th3,
        "logit_theta4": th4,
    });
    let path = a.out.join("truth.json");
    write_atomic(&path, serde_json::to_string_pretty(&truth_json)?.as_bytes())?;
    log::info!("wrote synthetic bundle and truth to {}", a.out.display());
    println!("{}", manifest.display());
    Ok(())
}

fn parse_monitors(codes: &[String]) -> Result<Vec<MonitorGroup>> {
    codes
        .iter()
        .filter(|c| !c.trim().is_empty())
        .map(|c| {
            MonitorGroup::parse(c).ok_or_else(|| {
                let valid: Vec<&str> = MonitorGroup::ALL.iter().map(|g| g.code()).collect();
                usage(format!("unknown monitor group '{c}' (valid: {})", valid.join(", ")))
            })
        })
        .collect()
}

fn fit(a: FitArgs) -> Result<()> {
    let settings = McmcSettings {
        n_chains: a.chains,
        n_burnin: a.burnin,
        n_iterations: a.iters,
        thin: a.thin,
        seed: a.seed,
        adaptation_window: None,
        monitors: parse_monitors(&a.monitor)?,
    };
    settings.validate().map_err(|e| usage(e.to_string()))?;
    let bundle = load(&a.manifest)?;
    log::info!(
        "fitting {} chains: {} burn-in + {} sweeps, thin {}",
        settings.n_chains,
        settings.n_burnin,
        settings.n_iterations,
        settings.thin
    );
    let out = run_mcmc(&bundle.config, &bundle.obs, &settings)?;
    out_dir(&a.out)?;
    let chains_path = a.out.join("chains.bin");
    write_chains(&out, &chains_path)?;
    let conv = convergence_table(&out);
    let sums = posterior_summary(&out, &DEFAULT_QUANTILES);
    write_summaries(&a.out.join("convergence.csv"), &sums, &conv)?;
    println!("{}", chains_path.display());
    match max_rhat(&conv) {
        Some((name, r)) => {
            log::info!("largest R̂ {r:.4} ({name})");
            if r >= RHAT_GATE && !a.no_gate {
                return Err(GateFailed {
                    name: name.to_string(),
                    rhat: r,
                }
                .into());
            }
        }
        None => log::warn!("R̂ needs at least two chains with draws; gate not applied"),
    }
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let out = read_chains(&a.chains_file)?;
    let conv = convergence_table(&out);
    let sums = posterior_summary(&out, &DEFAULT_QUANTILES);
    print!("{}", summaries_csv(&sums, &conv));
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        write_summaries(&dir.join("convergence.csv"), &sums, &conv)?;
    }
    if let Some((name, r)) = max_rhat(&conv) {
        log::info!("largest R̂ {r:.4} ({name})");
    }
    Ok(())
}

fn basis(p: &PosteriorArgs) -> EggBasis {
    if p.spawner_eggs {
        EggBasis::Spawners
    } else {
        EggBasis::Returns
    }
}

fn check_posterior_args(p: &PosteriorArgs) -> Result<()> {
    if p.draws == 0 {
        return Err(usage("--draws must be at least 1"));
    }
    if p.horizon == 0 {
        return Err(usage("--horizon must be at least 1"));
    }
    Ok(())
}

fn engine(p: &PosteriorArgs) -> Result<(DatasetBundle, RiskEngine)> {
    check_posterior_args(p)?;
    let bundle = load(&p.manifest)?;
    let chains = read_chains(&p.chains_file)?;
    let engine =
        RiskEngine::from_chains(&bundle.config, &bundle.obs, &chains, p.draws, p.seed, basis(p))?;
    log::info!("forecasting from {} posterior draws", engine.n_draws());
    Ok((bundle, engine))
}

fn forecast(a: ForecastArgs) -> Result<()> {
    let (bundle, engine) = engine(&a.posterior)?;
    let scenario = bundle.scenario(a.grid, a.grid_fa, a.posterior.horizon);
    let tr = engine.trajectories(&scenario)?;
    out_dir(&a.out)?;
    let path = a.out.join("forecast.csv");
    write_atomic(&path, tables::forecast_csv(&bundle.config, &tr).as_bytes())?;
    println!("{}", path.display());
    Ok(())
}

fn risk(a: RiskArgs) -> Result<()> {
    let (bundle, engine) = engine(&a.posterior)?;
    let template = bundle.scenario(0.0, 0.0, a.posterior.horizon);
    let scenarios = scenario_grid(&a.grid, &a.grid_fa, &template);
    log::info!("evaluating {} scenarios", scenarios.len());
    let report = engine.report(&scenarios)?;
    out_dir(&a.out)?;
    let path = a.out.join("risk_report.json");
    write_risk_report(&report, &path)?;
    write_atomic(
        &a.out.join("risk_grids.csv"),
        tables::probability_grids(&report, &a.grid, &a.grid_fa).as_bytes(),
    )?;
    println!("{}", path.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    check_posterior_args(&a.posterior)?;
    let p = &a.posterior;
    let settings = SessionSettings {
        working_set: p.draws,
        seed: p.seed,
        basis: basis(p),
        default_horizon: p.horizon,
    };
    let store = SessionStore::load(&p.manifest, &p.chains_file, settings)?;
    let ip = if a.public { [0, 0, 0, 0] } else { [127, 0, 0, 1] };
    let addr = SocketAddr::from((ip, a.port));
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    rt.block_on(async move {
        let listener = salmon_service::bind(addr).await?;
        salmon_service::serve(Arc::new(store), listener).await
    })?;
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let bundle = load(&a.manifest)?;
    let chains = read_chains(&a.chains_file)?;
    if chains.config_fingerprint != config_fingerprint(&bundle.config) {
        return Err(salmon_lcm::forecast::ForecastError::ConfigMismatch.into());
    }
    out_dir(&a.out)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        let path = a.out.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
        Ok(())
    };
    emit("timeseries.csv", tables::time_series(&chains))?;
    emit("csg_timeseries.csv", tables::csg_series(&bundle.config, &chains))?;
    for code in ["rho3", "rho4"] {
        match tables::correlation_matrix(&bundle.config, &chains, code) {
            Some(csv) => emit(&format!("correlation_{code}.csv"), csv)?,
            None => log::warn!("{code} was not monitored; no correlation table"),
        }
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
