//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Tolerances and settings are pinned below.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use salmon_lcm::dataio::synthetic::{desk_config, draw_truth, generate_synthetic, truth_logits, ObsNoiseSpec};
use salmon_lcm::dataio::DatasetBundle;
use salmon_lcm::domain::{Csg, ModelConfig};
use salmon_lcm::forecast::{
    apply_sharing_fraction, scenario_grid, Boundary, EggBasis, FrozenInputs, RiskEngine, DEFAULT_GRID,
};
use salmon_lcm::inference::{
    convergence_table, gibbs_update_precision, posterior_summary, run_mcmc, ChainOutput, McmcSettings,
    MonitorGroup,
};
use salmon_lcm::lifecycle::simulate_forward;
use salmon_lcm::lifecycle::transitions::{
    allocate_and_sum_smolts, correlation_from_covariance, draw_smolt_cohort, lognormal_sigma2,
    split_maturation, survive_to_pfa,
};
use salmon_lcm::likelihood::ObservationSet;

const MASS_BALANCE_TOL: f64 = 1e-12;
const MASS_BALANCE_SEEDS: u64 = 5;
const EXPECTATION_DRAWS: usize = 100_000;
const EXPECTATION_SE: f64 = 3.0;
const CORRELATION_MATRICES: usize = 100;
const CORRELATION_TOL: f64 = 1e-12;
const WISHART_DRAWS: usize = 100_000;
const WISHART_REL_TOL: f64 = 0.02;
const PRIOR_DRAWS_PER_CHAIN: usize = 5_000;
const PRIOR_THIN: usize = 20;
const KS_MIN_P: f64 = 0.01;
const RECOVERY_BURNIN: usize = 20_000;
const RECOVERY_ITERS: usize = 40_000;
const RECOVERY_THIN: usize = 20;
const RHAT_GATE: f64 = 1.1;
const MIN_COVERAGE: f64 = 0.8;
const RISK_DRAWS: usize = 2000;
const VARIANCE_DRAWS: usize = 5000;
const VARIANCE_HORIZON: usize = 8;
const VARIANCE_REL_TOL: f64 = 0.15;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

/// Synthetic desk bundle shared by the recovery and forecast criteria.
fn desk_bundle(seed: u64) -> (DatasetBundle, salmon_lcm::dataio::synthetic::SyntheticTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    generate_synthetic(&desk_config(), seed, &ObsNoiseSpec::default(), &mut rng).unwrap()
}

fn mass_balance() -> Outcome {
    let t0 = Instant::now();
    let config = desk_config();
    let mut worst = 0.0f64;
    let mut nodes = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 1..=MASS_BALANCE_SEEDS {
        let truth = draw_truth(&config, seed).unwrap();
        let forward = simulate_forward(&config, &truth.params, &mut rng).unwrap();
        for state in [&truth.state, &forward] {
            for (_, _, _, pre, catch, esc) in state.nodes() {
                let rel = (catch + esc - pre).abs() / pre.abs().max(f64::MIN_POSITIVE);
                worst = worst.max(if pre == 0.0 { (catch + esc).abs() } else { rel });
                nodes += 1;
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        worst <= MASS_BALANCE_TOL && nodes > 0 && within(el, 1.0),
        format!("{nodes} nodes, worst relative error {worst:.2e} (tol {MASS_BALANCE_TOL:e}), {:.2} s", el.as_secs_f64()),
    )
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn expectation_preservation() -> Outcome {
    let t0 = Instant::now();
    let config = desk_config();
    let bio = &config.bio[0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = EXPECTATION_DRAWS;
    let mut checks: Vec<(String, f64, f64, f64)> = Vec::new();
    let mut check = |name: &str, draws: Vec<f64>, expected: f64| {
        let (m, se) = mean_and_se(&draws);
        checks.push((name.to_string(), m, expected, se));
    };

    let eggs = 2.0e6;
    let v: Vec<f64> = (0..n).map(|_| draw_smolt_cohort(eggs, bio, &mut rng)).collect();
    check("smolt cohort", v, bio.theta1_mean * eggs);

    let theta2 = [0.2, 0.5, 0.3];
    let n2 = 1.0e4;
    for cv in [config.process_jitter_cv, 0.5] {
        let s2 = lognormal_sigma2(cv);
        let mut by_age = vec![Vec::with_capacity(n); theta2.len()];
        for _ in 0..n {
            let z: Vec<f64> = (0..theta2.len()).map(|_| rng.sample(StandardNormal)).collect();
            let mut n3 = vec![0.0; 8];
            let ages = allocate_and_sum_smolts(0, n2, &theta2, s2, &z, &mut n3, 0);
            for (a, v) in ages.into_iter().enumerate() {
                by_age[a].push(v);
            }
        }
        for (a, v) in by_age.into_iter().enumerate() {
            check(&format!("smolt age {} (cv {cv})", a + 1), v, theta2[a] * n2);
        }

        let (n3, theta3) = (5.0e4, 0.08);
        let v: Vec<f64> = (0..n).map(|_| survive_to_pfa(n3, theta3, cv, &mut rng)).collect();
        check(&format!("post-smolt survival (cv {cv})"), v, theta3 * n3);

        let (n4, theta4) = (4.0e3, 0.7);
        let (m, nm): (Vec<f64>, Vec<f64>) =
            (0..n).map(|_| split_maturation(n4, theta4, cv, &mut rng)).unzip();
        check(&format!("maturing (cv {cv})"), m, theta4 * n4);
        check(&format!("non-maturing (cv {cv})"), nm, (1.0 - theta4) * n4);
    }
    let el = t0.elapsed();
    let worst = checks
        .iter()
        .map(|(name, m, e, se)| ((m - e).abs() / se, name.as_str()))
        .fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    outcome(
        worst.0 <= EXPECTATION_SE && within(el, 10.0),
        format!(
            "{} transitions at {n} draws, worst |mean - skeleton| = {:.2} SE ({}), {:.2} s",
            checks.len(),
            worst.0,
            worst.1,
            el.as_secs_f64()
        ),
    )
}

fn correlation() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    for i in 0..CORRELATION_MATRICES {
        let n = rng.random_range(2..=8);
        let k = rng.random_range(1..=n + 2);
        let a = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma = &a * a.transpose();
        let c: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let rho = correlation_from_covariance(&sigma).unwrap();
        let scaled = correlation_from_covariance(&(&sigma * c)).unwrap();
        for r in 0..n {
            for s in 0..n {
                let ok = (rho[(r, s)] - rho[(s, r)]).abs() <= CORRELATION_TOL
                    && (-1.0..=1.0).contains(&rho[(r, s)])
                    && (rho[(r, s)] - scaled[(r, s)]).abs() <= CORRELATION_TOL
                    && (r != s || (rho[(r, r)] - 1.0).abs() <= CORRELATION_TOL);
                if !ok {
                    failures.push(format!("matrix {i} entry ({r},{s})"));
                }
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        failures.is_empty() && within(el, 1.0),
        format!(
            "{CORRELATION_MATRICES} PSD matrices, {} failing entries{}, {:.3} s",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
            el.as_secs_f64()
        ),
    )
}

fn wishart_conjugacy() -> Outcome {
    let t0 = Instant::now();
    let (n, t) = (3, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let l = DMatrix::from_row_slice(3, 3, &[0.3, 0.0, 0.0, 0.1, 0.25, 0.0, -0.05, 0.08, 0.2]);
    let rows: Vec<_> = (1..t)
        .map(|_| {
            let z = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            (&l * z).transpose()
        })
        .collect();
    let increments = DMatrix::from_rows(&rows);
    let omega = DMatrix::<f64>::identity(n, n);
    let delta = n as f64;

    // Analytic posterior mean (δ + T - 1) (Ω⁻¹ + Σ xᵢxᵢᵀ)⁻¹, accumulated row by row.
    let mut scatter = omega.clone().try_inverse().unwrap();
    for row in increments.row_iter() {
        scatter += row.transpose() * row;
    }
    let expected = scatter.try_inverse().unwrap() * (delta + (t - 1) as f64);

    let mut acc = DMatrix::<f64>::zeros(n, n);
    for _ in 0..WISHART_DRAWS {
        acc += gibbs_update_precision(&increments, &omega, delta, &mut rng).unwrap();
    }
    let mean = acc / WISHART_DRAWS as f64;
    let rel = (&mean - &expected).norm() / expected.norm();
    let diag = (0..n)
        .map(|i| ((mean[(i, i)] - expected[(i, i)]) / expected[(i, i)]).abs())
        .fold(0.0f64, f64::max);
    let el = t0.elapsed();
    outcome(
        rel <= WISHART_REL_TOL && diag <= WISHART_REL_TOL && within(el, 30.0),
        format!(
            "N={n} T={t}, {WISHART_DRAWS} draws: Frobenius rel. error {rel:.4}, worst diagonal {diag:.4} (tol {WISHART_REL_TOL}), {:.1} s",
            el.as_secs_f64()
        ),
    )
}

/// Asymptotic Kolmogorov p-value of a one-sample KS statistic.
fn ks_p_value(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0f64, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

fn prior_recovery() -> Outcome {
    let t0 = Instant::now();
    let config = desk_config();
    let settings = McmcSettings {
        n_chains: 2,
        n_burnin: 2_000,
        n_iterations: PRIOR_DRAWS_PER_CHAIN * PRIOR_THIN,
        thin: PRIOR_THIN,
        seed: 6,
        adaptation_window: None,
        monitors: vec![MonitorGroup::LogitTheta3, MonitorGroup::LogitTheta4, MonitorGroup::HarvestSea],
    };
    let out = run_mcmc(&config, &ObservationSet::default(), &settings).unwrap();
    let pooled = |name: &str| -> Vec<f64> {
        out.column(out.column_index(name).unwrap()).into_iter().flatten().collect()
    };
    let first = config.year_label(0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let beta = Beta::new(1.0, 2.0).unwrap();
    let mut tests: Vec<(String, f64)> = Vec::new();
    for unit in &config.stock_units {
        for code in ["logit_theta3", "logit_theta4"] {
            let name = format!("{code}[{},{first}]", unit.label);
            tests.push((name.clone(), ks_p_value(pooled(&name), |x| normal.cdf(x))));
        }
    }
    for name in out.names.iter().filter(|n| n.starts_with("h[") && n.contains(&format!(",{first},"))) {
        tests.push((name.clone(), ks_p_value(pooled(name), |x| beta.cdf(x))));
    }
    let el = t0.elapsed();
    let n_draws = out.total_draws();
    let worst = tests
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap_or_default();
    outcome(
        worst.1 > KS_MIN_P && n_draws >= 10_000 && within(el, 300.0),
        format!(
            "{} KS tests at {n_draws} thinned draws, smallest p {:.3} ({}), {:.0} s",
            tests.len(),
            worst.1,
            worst.0,
            el.as_secs_f64()
        ),
    )
}

fn parameter_recovery() -> Outcome {
    let t0 = Instant::now();
    let (bundle, truth) = desk_bundle(1);
    let settings = McmcSettings {
        n_chains: 2,
        n_burnin: RECOVERY_BURNIN,
        n_iterations: RECOVERY_ITERS,
        thin: RECOVERY_THIN,
        seed: 1,
        ..McmcSettings::default()
    };
    let out = run_mcmc(&bundle.config, &bundle.obs, &settings).unwrap();
    let conv = convergence_table(&out);
    let rhats: Vec<(f64, &str)> = conv
        .iter()
        .filter_map(|c| c.rhat.map(|r| (r, c.name.as_str())))
        .collect();
    let worst = rhats
        .iter()
        .cloned()
        .fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    let above = rhats.iter().filter(|r| r.0 >= RHAT_GATE).count();

    let sums = posterior_summary(&out, &[0.05, 0.95]);
    let logits = truth_logits(&truth);
    let cfg = &bundle.config;
    let (mut covered, mut cells) = (0, 0);
    for (w, code) in ["logit_theta3", "logit_theta4"].iter().enumerate() {
        for (r, unit) in cfg.stock_units.iter().enumerate() {
            for t in 0..cfg.n_years {
                let name = format!("{code}[{},{}]", unit.label, cfg.year_label(t));
                let s = sums.iter().find(|s| s.name == name).unwrap();
                let v = logits[w][r][t];
                covered += (s.quantiles[0].1 <= v && v <= s.quantiles[1].1) as usize;
                cells += 1;
            }
        }
    }
    let coverage = covered as f64 / cells as f64;
    let el = t0.elapsed();
    outcome(
        above == 0 && rhats.len() == out.n_names() && coverage >= MIN_COVERAGE && within(el, 900.0),
        format!(
            "{} monitored scalars, max R̂ {:.3} ({}), {above} at or above {RHAT_GATE}; 90% coverage {covered}/{cells} = {coverage:.3} (min {MIN_COVERAGE}); {:.0} s",
            rhats.len(),
            worst.0,
            worst.1,
            el.as_secs_f64()
        ),
    )
}

fn sharing_fraction() -> Outcome {
    let got = apply_sharing_fraction(100.0);
    outcome(
        got == (150.0, 100.0, 250.0),
        format!("quota 100 t -> WG {}, NA&E {}, total {}", got.0, got.1, got.2),
    )
}

fn scenario_count() -> Outcome {
    let grid = scenario_grid(&DEFAULT_GRID, &DEFAULT_GRID, &salmon_lcm::forecast::CatchScenario::new(0.0, 0.0, 5));
    let mut pairs: Vec<(u64, u64)> = grid
        .iter()
        .map(|s| (s.wg_quota_tonnes.to_bits(), s.fa_quota_tonnes.to_bits()))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    outcome(
        grid.len() == 36 && pairs.len() == 36,
        format!("{} scenarios, {} distinct quota pairs", grid.len(), pairs.len()),
    )
}

fn short_posterior(bundle: &DatasetBundle) -> ChainOutput {
    let settings = McmcSettings {
        n_chains: 2,
        n_burnin: 200,
        n_iterations: RISK_DRAWS / 2,
        thin: 1,
        seed: 7,
        ..McmcSettings::default()
    };
    run_mcmc(&bundle.config, &bundle.obs, &settings).unwrap()
}

fn risk_coherence(bundle: &DatasetBundle) -> Outcome {
    let chains = short_posterior(bundle);
    let t0 = Instant::now();
    let cfg: &ModelConfig = &bundle.config;
    let engine =
        RiskEngine::from_chains(cfg, &bundle.obs, &chains, RISK_DRAWS, 8, EggBasis::Returns).unwrap();
    let grid = scenario_grid(&DEFAULT_GRID, &DEFAULT_GRID, &bundle.scenario(0.0, 0.0, 5));
    let report = engine.report(&grid).unwrap();
    let nw = DEFAULT_GRID.len();
    let at = |i_fa: usize, i_wg: usize| &report.scenarios[i_fa * nw + i_wg];
    let mut problems: Vec<String> = Vec::new();
    for sc in &report.scenarios {
        for g in &sc.csgs {
            for k in 0..report.horizon {
                let min = sc
                    .units
                    .iter()
                    .filter(|u| g.units.contains(&u.unit))
                    .map(|u| u.probability[k])
                    .fold(1.0f64, f64::min);
                if g.probability[k] > min {
                    problems.push(format!("simultaneous {} > min individual at ({}, {})", g.csg, sc.wg_tonnes, sc.fa_tonnes));
                }
            }
        }
    }
    for u in 0..cfg.management_units.len() {
        for k in 0..report.horizon {
            for i in 0..nw {
                for j in 1..nw {
                    if at(i, j).units[u].probability[k] > at(i, j - 1).units[u].probability[k] {
                        problems.push(format!("unit {u} increases with WG quota"));
                    }
                    if at(j, i).units[u].probability[k] > at(j - 1, i).units[u].probability[k] {
                        problems.push(format!("unit {u} increases with Faroes quota"));
                    }
                    if at(0, i).units[u].csg == Csg::NA
                        && at(j, i).units[u].probability[k] != at(0, i).units[u].probability[k]
                    {
                        problems.push(format!("NA unit {u} depends on the Faroes quota"));
                    }
                }
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        problems.is_empty() && report.n_draws == RISK_DRAWS && within(el, 120.0),
        format!(
            "{} scenarios x {} draws, {} violations{}, {:.1} s",
            report.scenarios.len(),
            report.n_draws,
            problems.len(),
            problems.first().map(|p| format!(" (first: {p})")).unwrap_or_default(),
            el.as_secs_f64()
        ),
    )
}

fn forecast_variance(bundle: &DatasetBundle, truth: &salmon_lcm::dataio::synthetic::SyntheticTruth) -> Outcome {
    let cfg = &bundle.config;
    let boundary = Boundary::from_state(cfg, &truth.params, &truth.state);
    let engine = RiskEngine::new(
        cfg.clone(),
        FrozenInputs::from_data(cfg, &bundle.obs),
        vec![boundary.clone(); VARIANCE_DRAWS],
        9,
        EggBasis::Returns,
    )
    .unwrap();
    let tr = engine.trajectories(&bundle.scenario(0.0, 0.0, VARIANCE_HORIZON)).unwrap();
    let mut worst = 0.0f64;
    for r in 0..cfg.n_su() {
        let step = boundary.sigma[0][(r, r)];
        for k in 0..VARIANCE_HORIZON {
            let v: Vec<f64> = tr.iter().map(|t| t.at(&t.logit[0], k, r)).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0);
            worst = worst.max((var / ((k + 1) as f64 * step) - 1.0).abs());
        }
    }
    outcome(
        worst <= VARIANCE_REL_TOL,
        format!(
            "{VARIANCE_DRAWS} draws, horizons 1..={VARIANCE_HORIZON}: worst |var / (k σ²) - 1| = {worst:.3} (tol {VARIANCE_REL_TOL})"
        ),
    )
}

fn mcmc_bookkeeping() -> Outcome {
    let full = McmcSettings::default();
    let full_ok = full.n_iterations == 2_500_000 && full.thin == 500 && full.stored_draws() == 5000;
    let scaled = McmcSettings {
        n_chains: 2,
        n_burnin: 10,
        n_iterations: 2_500,
        thin: 5,
        seed: 10,
        adaptation_window: None,
        monitors: vec![MonitorGroup::LogitTheta3],
    };
    let out = run_mcmc(&desk_config(), &ObservationSet::default(), &scaled).unwrap();
    let w = out.n_names();
    let scaled_ok = out.chains.len() == 2
        && out
            .chains
            .iter()
            .all(|c| c.n_draws == 500 && c.draws.len() == 500 * w && c.boundary.len() == 500 * out.boundary_len);
    outcome(
        full_ok && scaled_ok,
        format!(
            "2.5M iterations at thin 500 store {} draws per chain; a 2500/5 run stored {:?}",
            full.stored_draws(),
            out.chains.iter().map(|c| c.n_draws).collect::<Vec<_>>()
        ),
    )
}

fn main() {
    let (bundle, truth) = desk_bundle(2);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("mass balance", Box::new(mass_balance)),
        ("expectation preservation", Box::new(expectation_preservation)),
        ("correlation", Box::new(correlation)),
        ("wishart conjugacy", Box::new(wishart_conjugacy)),
        ("prior recovery", Box::new(prior_recovery)),
        ("parameter recovery", Box::new(parameter_recovery)),
        ("sharing fraction", Box::new(sharing_fraction)),
        ("scenario grid", Box::new(scenario_count)),
        ("risk coherence", Box::new(|| risk_coherence(&bundle))),
        ("forecast variance", Box::new(|| forecast_variance(&bundle, &truth))),
        ("mcmc bookkeeping", Box::new(mcmc_bookkeeping)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let o = run();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
