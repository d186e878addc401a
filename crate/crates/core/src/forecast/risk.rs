use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boundary::Boundary;
use super::engine::{project, ForecastContext, ForecastNoise, ForecastTrajectory};
use super::scenario::{fishery_targets, CatchScenario, FrozenInputs};
use super::ForecastError;
use crate::domain::{Csg, ModelConfig};
use crate::inference::{config_fingerprint, ChainOutput};
use crate::likelihood::ObservationSet;

pub const RISK_SCHEMA_VERSION: u32 = 1;

/// Which egg count is compared with conservation limits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EggBasis {
    /// Eggs potentially deposited by returning fish.
    #[default]
    Returns,
    /// Eggs deposited by spawners after homewater fisheries.
    Spawners,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRisk {
    pub unit: String,
    pub csg: Csg,
    pub cl_eggs: f64,
    /// P(eggs >= CL) by forecast year.
    pub probability: Vec<f64>,
    pub mc_se: Vec<f64>,
    /// Posterior median of the unit's eggs by forecast year.
    pub median_eggs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsgRisk {
    pub csg: Csg,
    pub units: Vec<String>,
    /// P(every unit of the group meets its CL in the same draw).
    pub probability: Vec<f64>,
    pub mc_se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRisk {
    pub wg_tonnes: f64,
    pub fa_tonnes: f64,
    pub units: Vec<UnitRisk>,
    pub csgs: Vec<CsgRisk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub schema_version: u32,
    pub n_draws: usize,
    pub horizon: usize,
    /// Calendar years of the forecast.
    pub years: Vec<i32>,
    pub egg_basis: EggBasis,
    pub seed: u64,
    pub scenarios: Vec<ScenarioRisk>,
}

fn mc_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Individual and simultaneous CL-attainment probabilities over draws.
pub fn compute_risk(
    trajectories: &[ForecastTrajectory],
    config: &ModelConfig,
    scenario: &CatchScenario,
    basis: EggBasis,
) -> Result<ScenarioRisk, ForecastError> {
    let n = trajectories.len();
    if n == 0 {
        return Err(ForecastError::NoDraws);
    }
    if n < 100 {
        log::warn!("risk computed from only {n} draws");
    }
    let h = trajectories[0].horizon;
    let eggs = |tr: &ForecastTrajectory, k: usize, members: &[usize]| -> f64 {
        let v = match basis {
            EggBasis::Returns => &tr.eggs_returns,
            EggBasis::Spawners => &tr.eggs_spawners,
        };
        members.iter().map(|&r| tr.at(v, k, r)).sum()
    };
    // meets[u][k * n + d]
    let meets: Vec<Vec<bool>> = config
        .management_units
        .iter()
        .map(|mu| {
            (0..h)
                .flat_map(|k| {
                    trajectories
                        .iter()
                        .map(move |tr| eggs(tr, k, &mu.members) >= mu.cl_eggs)
                })
                .collect()
        })
        .collect();
    let units = config
        .management_units
        .iter()
        .zip(&meets)
        .map(|(mu, m)| {
            let probability: Vec<f64> = (0..h)
                .map(|k| m[k * n..(k + 1) * n].iter().filter(|b| **b).count() as f64 / n as f64)
                .collect();
            let median_eggs = (0..h)
                .map(|k| {
                    let mut v: Vec<f64> =
                        trajectories.iter().map(|tr| eggs(tr, k, &mu.members)).collect();
                    median(&mut v)
                })
                .collect();
            UnitRisk {
                unit: mu.name.clone(),
                csg: config.csg_of(mu.members[0]),
                cl_eggs: mu.cl_eggs,
                mc_se: probability.iter().map(|&p| mc_se(p, n)).collect(),
                probability,
                median_eggs,
            }
        })
        .collect();
    let csgs = config
        .units_by_csg()
        .into_iter()
        .map(|(csg, members)| {
            let probability: Vec<f64> = (0..h)
                .map(|k| {
                    (0..n)
                        .filter(|&d| members.iter().all(|&u| meets[u][k * n + d]))
                        .count() as f64
                        / n as f64
                })
                .collect();
            CsgRisk {
                csg,
                units: members
                    .iter()
                    .map(|&u| config.management_units[u].name.clone())
                    .collect(),
                mc_se: probability.iter().map(|&p| mc_se(p, n)).collect(),
                probability,
            }
        })
        .collect();
    Ok(ScenarioRisk {
        wg_tonnes: scenario.wg_quota_tonnes,
        fa_tonnes: scenario.fa_quota_tonnes,
        units,
        csgs,
    })
}

/// Scenario evaluation over a fixed set of posterior draws with common
/// random numbers: draw `i` always uses stream `i` of the seeded generator.
#[derive(Debug, Clone)]
pub struct RiskEngine {
    pub config: ModelConfig,
    pub boundaries: Vec<Boundary>,
    pub seed: u64,
    pub basis: EggBasis,
    ctx: ForecastContext,
}

impl RiskEngine {
    pub fn new(
        config: ModelConfig,
        frozen: FrozenInputs,
        boundaries: Vec<Boundary>,
        seed: u64,
        basis: EggBasis,
    ) -> Result<Self, ForecastError> {
        if boundaries.is_empty() {
            return Err(ForecastError::NoDraws);
        }
        for b in &boundaries {
            b.validate(&config)?;
        }
        let ctx = ForecastContext::new(&config, frozen);
        Ok(Self {
            config,
            boundaries,
            seed,
            basis,
            ctx,
        })
    }

    /// Engine over up to `max_draws` posterior draws spread evenly over the
    /// pooled chains. The chains must come from `config`.
    pub fn from_chains(
        config: &ModelConfig,
        obs: &ObservationSet,
        chains: &ChainOutput,
        max_draws: usize,
        seed: u64,
        basis: EggBasis,
    ) -> Result<Self, ForecastError> {
        if chains.config_fingerprint != config_fingerprint(config) {
            return Err(ForecastError::ConfigMismatch);
        }
        let boundaries = chains.boundaries(max_draws)?;
        Self::new(
            config.clone(),
            FrozenInputs::from_data(config, obs),
            boundaries,
            seed,
            basis,
        )
    }

    pub fn n_draws(&self) -> usize {
        self.boundaries.len()
    }

    pub fn frozen(&self) -> &FrozenInputs {
        &self.ctx.frozen
    }

    fn noise(&self, draw: usize, horizon: usize) -> ForecastNoise {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(draw as u64);
        ForecastNoise::draw(&self.config, horizon, &mut rng)
    }

    /// Trajectories of every draw, in draw order.
    pub fn trajectories(
        &self,
        scenario: &CatchScenario,
    ) -> Result<Vec<ForecastTrajectory>, ForecastError> {
        scenario.validate()?;
        let targets = fishery_targets(&self.config, &self.ctx.frozen, scenario)?;
        self.boundaries
            .par_iter()
            .enumerate()
            .map(|(i, b)| {
                let noise = self.noise(i, scenario.horizon_years);
                project(&self.config, &self.ctx, &targets, b, &noise)
            })
            .collect()
    }

    pub fn evaluate(&self, scenario: &CatchScenario) -> Result<ScenarioRisk, ForecastError> {
        let tr = self.trajectories(scenario)?;
        compute_risk(&tr, &self.config, scenario, self.basis)
    }

    /// Report over several scenarios sharing one horizon.
    pub fn report(&self, scenarios: &[CatchScenario]) -> Result<RiskReport, ForecastError> {
        let horizon = scenarios
            .first()
            .map(|s| s.horizon_years)
            .ok_or_else(|| ForecastError::InvalidScenario("no scenarios".into()))?;
        if scenarios.iter().any(|s| s.horizon_years != horizon) {
            return Err(ForecastError::InvalidScenario(
                "scenarios must share one horizon".into(),
            ));
        }
        let results = scenarios
            .iter()
            .map(|s| self.evaluate(s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.wrap(horizon, results))
    }

    pub fn wrap(&self, horizon: usize, scenarios: Vec<ScenarioRisk>) -> RiskReport {
        RiskReport {
            schema_version: RISK_SCHEMA_VERSION,
            n_draws: self.n_draws(),
            horizon,
            years: (0..horizon)
                .map(|k| self.config.year_label(self.config.n_years + k))
                .collect(),
            egg_basis: self.basis,
            seed: self.seed,
            scenarios,
        }
    }
}
