//! Desk-scale configuration and synthetic datasets with known truth.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetBundle};
use crate::domain::tables::{mixed_stock_fisheries, routes_for, EGGS1, EGGS2, PSM, STOCK_UNITS};
use crate::domain::{
    logit, AllocationDataMode, Csg, FixedBioParams, HarvestMode, HarvestSlot, InitialGuess, ManagementUnit,
    ModelConfig, SeaAge, StockUnitId, YearSu,
};
use crate::forecast::{MeanWeights, SharingFraction, RECENT_YEARS};
use crate::lifecycle::transitions::lognormal_sigma2;
use crate::lifecycle::{reconstruct, LatentState};
use crate::likelihood::{
    AllocationObservation, CatchObs, LognormalSummary, ObservationSet, ReturnObs, SeaTotalObs,
};
use crate::params::{Layout, ParameterSet, Walk};

/// Units of the desk-scale configuration: one North American and two
/// southern European units.
pub const DESK_UNITS: [&str; 3] = ["GF", "FR", "IR"];
pub const DESK_YEARS: usize = 20;
pub const DESK_SMOLT_AGES: usize = 4;
pub const DESK_FIRST_YEAR: i32 = 1995;

/// Reported log-scale SD for observations generated without noise.
const EXACT_SD: f64 = 0.05;

/// Three units over twenty years with four smolt ages and no delayed
/// spawning or stocking. Smolt-age proportions are the tabulated columns
/// truncated to four ages and rescaled.
pub fn desk_config() -> ModelConfig {
    let n_years = DESK_YEARS;
    let a = DESK_SMOLT_AGES;
    let mut stock_units = Vec::new();
    let mut bio = Vec::new();
    for (i, label) in DESK_UNITS.iter().enumerate() {
        let col = STOCK_UNITS
            .iter()
            .position(|(l, _)| l == label)
            .expect("tabulated unit");
        stock_units.push(StockUnitId {
            index: i + 1,
            csg: STOCK_UNITS[col].1,
            label: label.to_string(),
        });
        let mut psm: Vec<f64> = (0..a).map(|k| PSM[k][col]).collect();
        let s: f64 = psm.iter().sum();
        psm.iter_mut().for_each(|p| *p /= s);
        bio.push(FixedBioParams::new(EGGS1[col], EGGS2[col], psm));
    }
    let csgs: Vec<Csg> = stock_units.iter().map(|s| s.csg).collect();
    let n = stock_units.len();
    ModelConfig {
        first_year: DESK_FIRST_YEAR,
        n_years,
        n_smolt_ages: a,
        fisheries: mixed_stock_fisheries(&csgs, None),
        routes: routes_for(&csgs),
        labrador: None,
        process_jitter_cv: 0.01,
        homewater_cv: 0.05,
        delayed_spawning: [YearSu::zeros(n_years, n), YearSu::zeros(n_years, n)],
        stocking_2sw: YearSu::zeros(n_years, n),
        initial_guess: InitialGuess {
            smolts: vec![2.0e5, 1.0e5, 3.0e5],
            non_maturing: vec![4.0e3, 2.0e3, 6.0e3],
            cv: 1.0,
        },
        management_units: vec![
            ManagementUnit {
                name: "Gulf".into(),
                cl_eggs: 2.0e7,
                members: vec![0],
            },
            ManagementUnit {
                name: "France".into(),
                cl_eggs: 1.0e7,
                members: vec![1],
            },
            ManagementUnit {
                name: "Ireland".into(),
                cl_eggs: 3.0e7,
                members: vec![2],
            },
        ],
        stock_units,
        bio,
        wishart_dof: None,
    }
}

/// Observation noise of a synthetic dataset. Zero SDs emit the latent
/// values themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNoiseSpec {
    pub returns_sd: f64,
    pub sea_total_sd: f64,
    /// Apply the configured homewater CV to homewater catches.
    pub homewater: bool,
    /// Draw allocation tables from their Dirichlet likelihood.
    pub allocation: bool,
    /// Set each conservation limit to this fraction of the unit's median
    /// egg production (from returns) over the last years.
    pub calibrate_cls: Option<f64>,
}

impl Default for ObsNoiseSpec {
    fn default() -> Self {
        Self {
            returns_sd: 0.15,
            sea_total_sd: 0.15,
            homewater: true,
            allocation: true,
            calibrate_cls: Some(0.8),
        }
    }
}

impl ObsNoiseSpec {
    pub fn exact() -> Self {
        Self {
            returns_sd: 0.0,
            sea_total_sd: 0.0,
            homewater: false,
            allocation: false,
            calibrate_cls: None,
        }
    }
}

/// Known parameters and the trajectory they imply.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub params: ParameterSet,
    pub state: LatentState,
}

fn truth_covariance(n: usize, sd: f64, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { sd * sd } else { rho * sd * sd })
}

fn uniform_logit<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    logit(rng.random_range(lo..hi))
}

/// Parameters drawn around plausible values: survival logits starting near
/// -2.7, maturation near 0, homewater rates in [0.1, 0.4] and mixed-stock
/// rates in [0.02, 0.15].
pub fn draw_truth(config: &ModelConfig, seed: u64) -> Result<SyntheticTruth, DataError> {
    let layout = Arc::new(Layout::new(config));
    let n = config.n_su();
    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let mut p = ParameterSet::skeleton(layout.clone());
        p.walks[0] = crate::params::WalkMatrix::from_covariance(truth_covariance(n, 0.15, 0.5))
            .map_err(|e| DataError::Synthetic(e.to_string()))?;
        p.walks[1] = crate::params::WalkMatrix::from_covariance(truth_covariance(n, 0.1, 0.3))
            .map_err(|e| DataError::Synthetic(e.to_string()))?;
        for (r, s) in layout.su.iter().enumerate() {
            p.values[s.first[0]] = -2.7 + 0.2 * rng.sample::<f64, _>(StandardNormal);
            p.values[s.first[1]] = 0.3 * rng.sample::<f64, _>(StandardNormal);
            for w in 0..2 {
                for i in s.z[w].clone() {
                    p.values[i] = rng.sample(StandardNormal);
                }
            }
            for i in s.init_smolts.clone() {
                p.values[i] = config.initial_guess.smolts[r].ln()
                    + 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
            p.values[s.init_non_maturing] = config.initial_guess.non_maturing[r].ln();
            for i in s.homewater.clone() {
                p.values[i] = uniform_logit(0.1, 0.4, &mut rng);
            }
            for i in s.delayed.iter().flatten().flatten() {
                p.values[*i] = uniform_logit(0.1, 0.4, &mut rng);
            }
        }
        for f in &layout.fisheries {
            for i in f.range.clone() {
                p.values[i] = uniform_logit(0.02, 0.15, &mut rng);
            }
        }
        p.redraw_process_noise(&mut rng);
        let Some(state) = hold_fixed_shares(config, &mut p)? else {
            continue;
        };
        let healthy = state.all_finite_nonnegative()
            && state
                .su
                .iter()
                .all(|s| s.returns.iter().flatten().all(|&v| v > 50.0));
        if healthy {
            return Ok(SyntheticTruth { params: p, state });
        }
    }
    Err(DataError::Synthetic(
        "no viable truth within 100 attempts".into(),
    ))
}

/// Adjust the rates of per-unit fixed-allocation fisheries so that every
/// year's catch shares equal their average over years, keeping each year's
/// total catch. Returns `None` when a rate would leave (0, 0.5).
fn hold_fixed_shares(
    config: &ModelConfig,
    p: &mut ParameterSet,
) -> Result<Option<LatentState>, DataError> {
    let run = |p: &ParameterSet| reconstruct(config, p).map_err(|e| DataError::Synthetic(e.to_string()));
    let fixed: Vec<(usize, Vec<(usize, usize)>)> = config
        .fisheries
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            f.allocation_data_mode == AllocationDataMode::FixedProportions
                && f.harvest_mode == HarvestMode::PerSU
        })
        .map(|(i, f)| {
            let units = f
                .scope
                .iter()
                .filter_map(|&r| match f.slot_of(r, config.labrador) {
                    Some(HarvestSlot::Param(k)) => Some((r, k)),
                    _ => None,
                })
                .collect::<Vec<_>>();
            (i, units)
        })
        .filter(|(_, u)| u.len() >= 2)
        .collect();
    let mut state = run(p)?;
    if fixed.is_empty() {
        return Ok(Some(state));
    }
    let targets: Vec<Vec<f64>> = fixed
        .iter()
        .map(|(f, units)| {
            let mut mean = vec![0.0; units.len()];
            for t in 0..config.n_years {
                let c: Vec<f64> = units.iter().map(|&(r, _)| state.su[r].catch(*f, t)).collect();
                let total: f64 = c.iter().sum();
                for (m, x) in mean.iter_mut().zip(c) {
                    *m += x / total / config.n_years as f64;
                }
            }
            mean
        })
        .collect();
    for _ in 0..50 {
        let mut worst = 0.0f64;
        for ((f, units), target) in fixed.iter().zip(&targets) {
            for t in 0..config.n_years {
                let total: f64 = units.iter().map(|&(r, _)| state.su[r].catch(*f, t)).sum();
                for (&(r, k), share) in units.iter().zip(target) {
                    let pre = state.su[r].node(*f).map_or(0.0, |n| n.pre[t]);
                    let h = share * total / pre;
                    if !(h > 0.0 && h < 0.5) {
                        return Ok(None);
                    }
                    worst = worst.max((state.su[r].catch(*f, t) / total - share).abs());
                    let i = p.layout.sea_index(*f, t, k);
                    p.values[i] = logit(h);
                }
            }
        }
        state = run(p)?;
        if worst < 1e-12 {
            break;
        }
    }
    Ok(Some(state))
}

fn summary<R: Rng + ?Sized>(latent: f64, sd: f64, rng: &mut R) -> LognormalSummary {
    if sd > 0.0 {
        LognormalSummary {
            mean_log: latent.ln() + sd * rng.sample::<f64, _>(StandardNormal),
            sd_log: sd,
        }
    } else {
        LognormalSummary {
            mean_log: latent.ln(),
            sd_log: EXACT_SD,
        }
    }
}

fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .expect("positive concentration")
                .sample(rng)
                .max(1e-300)
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|x| x / s).collect()
}

/// Observations of `truth` through the likelihood's noise models.
pub fn observe<R: Rng + ?Sized>(
    config: &ModelConfig,
    truth: &SyntheticTruth,
    noise: &ObsNoiseSpec,
    rng: &mut R,
) -> ObservationSet {
    let st = &truth.state;
    let mut obs = ObservationSet::default();
    for (r, s) in st.su.iter().enumerate() {
        for t in 0..config.n_years {
            for age in SeaAge::BOTH {
                let a = age.idx();
                obs.returns.push(ReturnObs {
                    su: r,
                    year: t,
                    age,
                    summary: summary(s.returns[a][t], noise.returns_sd, rng),
                });
            }
        }
    }
    let hw_sd = if noise.homewater {
        lognormal_sigma2(config.homewater_cv).sqrt()
    } else {
        0.0
    };
    for (r, s) in st.su.iter().enumerate() {
        for t in 0..config.n_years {
            for age in SeaAge::BOTH {
                let a = age.idx();
                for (cells, latent) in [
                    (&mut obs.homewater, s.homewater_catch[a][t]),
                    (&mut obs.delayed, s.delayed_catch[a][t]),
                ] {
                    if latent > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        cells.push(CatchObs {
                            su: r,
                            year: t,
                            age,
                            catch: latent * (hw_sd * z).exp(),
                        });
                    }
                }
            }
        }
    }
    for (f, spec) in config.fisheries.iter().enumerate() {
        let sd = match (spec.fixed_cv, noise.sea_total_sd > 0.0) {
            (Some(cv), true) => lognormal_sigma2(cv).sqrt(),
            (None, true) => noise.sea_total_sd,
            (_, false) => 0.0,
        };
        for t in 0..config.n_years {
            let total = st.total_catch(f, t);
            if total > 0.0 {
                let mut s = summary(total, sd, rng);
                if sd > 0.0 {
                    s.sd_log = noise.sea_total_sd;
                }
                obs.sea_totals.push(SeaTotalObs {
                    fishery: f,
                    year: t,
                    summary: s,
                });
            }
        }
    }
    for (f, spec) in config.fisheries.iter().enumerate() {
        let harvested: Vec<usize> = spec
            .scope
            .iter()
            .copied()
            .filter(|&r| matches!(spec.slot_of(r, config.labrador), Some(HarvestSlot::Param(_))))
            .collect();
        if harvested.len() < 2 {
            continue;
        }
        let props = |t: usize| -> Vec<f64> {
            let c: Vec<f64> = harvested.iter().map(|&r| st.su[r].catch(f, t)).collect();
            let s: f64 = c.iter().sum();
            c.iter().map(|x| x / s).collect()
        };
        let mut emit = |p: Vec<f64>, year: Option<usize>, rng: &mut R| {
            let p = if noise.allocation {
                let alpha: Vec<f64> = p.iter().map(|x| spec.dirichlet_eta * x).collect();
                dirichlet(&alpha, rng)
            } else {
                p
            };
            obs.allocations.push(AllocationObservation {
                fishery: f,
                year,
                proportions: harvested.iter().copied().zip(p).collect(),
                eta: None,
            });
        };
        match spec.allocation_data_mode {
            AllocationDataMode::None => {}
            AllocationDataMode::AnnualProportions => {
                for t in 0..config.n_years {
                    emit(props(t), Some(t), rng);
                }
            }
            AllocationDataMode::FixedProportions => {
                let mut mean = vec![0.0; harvested.len()];
                for t in 0..config.n_years {
                    for (m, p) in mean.iter_mut().zip(props(t)) {
                        *m += p / config.n_years as f64;
                    }
                }
                emit(mean, None, rng);
            }
        }
    }
    obs
}

/// Synthetic dataset from a known truth. Truth depends only on
/// `true_params_seed`; observation noise is drawn from `rng`.
pub fn generate_synthetic<R: Rng + ?Sized>(
    config: &ModelConfig,
    true_params_seed: u64,
    noise: &ObsNoiseSpec,
    rng: &mut R,
) -> Result<(DatasetBundle, SyntheticTruth), DataError> {
    let truth = draw_truth(config, true_params_seed)?;
    let obs = observe(config, &truth, noise, rng);
    let mut config = config.clone();
    if let Some(frac) = noise.calibrate_cls {
        let from = config.n_years.saturating_sub(RECENT_YEARS);
        for mu in &mut config.management_units {
            let mut eggs: Vec<f64> = (from..config.n_years)
                .map(|t| {
                    mu.members
                        .iter()
                        .map(|&r| {
                            let s = &truth.state.su[r];
                            let b = &config.bio[r];
                            b.eggs1 * s.returns[0][t] + b.eggs2 * s.returns[1][t]
                        })
                        .sum()
                })
                .collect();
            eggs.sort_by(f64::total_cmp);
            let med = eggs[eggs.len() / 2];
            // three significant figures
            let mag = 10f64.powf(med.log10().floor() - 2.0);
            mu.cl_eggs = (frac * med / mag).round() * mag;
        }
    }
    Ok((
        DatasetBundle {
            config,
            obs,
            mean_weights: MeanWeights::placeholders(),
            sharing: SharingFraction::default(),
            warnings: Vec::new(),
        },
        truth,
    ))
}

/// Logit survival and maturation of the truth, year x unit.
pub fn truth_logits(truth: &SyntheticTruth) -> [Vec<Vec<f64>>; 2] {
    let n = truth.params.layout.n_su;
    Walk::BOTH.map(|w| (0..n).map(|r| truth.params.logit_trajectory(w, r)).collect())
}
