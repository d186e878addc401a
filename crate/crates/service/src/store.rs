use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use salmon_lcm::dataio::{load_bundle, read_chains, DatasetBundle};
use salmon_lcm::domain::Csg;
use salmon_lcm::forecast::{EggBasis, RiskEngine, RiskReport, ScenarioRisk, DEFAULT_GRID};
use salmon_lcm::inference::{posterior_summary, ChainOutput, QuantitySummary, DEFAULT_QUANTILES};

use crate::ServiceError;

/// Longest forecast horizon a request may ask for.
pub const MAX_HORIZON: usize = 30;
/// Most quota values per grid axis.
pub const MAX_GRID_VALUES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSettings {
    /// Posterior draws kept for scenario evaluation.
    pub working_set: usize,
    pub seed: u64,
    pub basis: EggBasis,
    pub default_horizon: usize,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            working_set: 2000,
            seed: 1,
            basis: EggBasis::Returns,
            default_horizon: 5,
        }
    }
}

/// Quotas are keyed by their bit patterns so that equal requests share an
/// entry.
type CacheKey = (u64, u64, usize);

/// Posterior draws, configuration and conservation limits loaded once, with
/// a cache of evaluated scenarios. Nothing but the cache changes after load.
pub struct SessionStore {
    bundle: DatasetBundle,
    engine: RiskEngine,
    summaries: Vec<QuantitySummary>,
    settings: SessionSettings,
    cache: Mutex<HashMap<CacheKey, Arc<ScenarioRisk>>>,
}

#[derive(Debug, Serialize)]
struct UnitMeta<'a> {
    label: &'a str,
    csg: Csg,
}

#[derive(Debug, Serialize)]
struct ManagementUnitMeta<'a> {
    name: &'a str,
    cl_eggs: f64,
    members: Vec<&'a str>,
}

#[derive(Debug, Serialize)]
struct GridMeta {
    wg_tonnes: Vec<f64>,
    fa_tonnes: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    first_year: i32,
    n_years: usize,
    n_su: usize,
    n_smolt_ages: usize,
    forecast_start_year: i32,
    stock_units: Vec<UnitMeta<'a>>,
    management_units: Vec<ManagementUnitMeta<'a>>,
    grid: GridMeta,
    default_horizon: usize,
    max_horizon: usize,
    n_draws: usize,
    seed: u64,
    egg_basis: EggBasis,
}

impl SessionStore {
    pub fn new(
        bundle: DatasetBundle,
        chains: &ChainOutput,
        settings: SessionSettings,
    ) -> Result<Self, ServiceError> {
        let engine = RiskEngine::from_chains(
            &bundle.config,
            &bundle.obs,
            chains,
            settings.working_set,
            settings.seed,
            settings.basis,
        )?;
        let summaries = posterior_summary(chains, &DEFAULT_QUANTILES)
            .into_iter()
            .filter(|q| {
                ["logit_theta3[", "logit_theta4[", "theta3[", "theta4[", "rho3[", "rho4["]
                    .iter()
                    .any(|p| q.name.starts_with(p))
            })
            .collect();
        Ok(Self {
            bundle,
            engine,
            summaries,
            settings,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn load(
        manifest: &Path,
        chains: &Path,
        settings: SessionSettings,
    ) -> Result<Self, ServiceError> {
        let bundle = load_bundle(manifest)?;
        let chains = read_chains(chains)?;
        Self::new(bundle, &chains, settings)
    }

    pub fn n_draws(&self) -> usize {
        self.engine.n_draws()
    }

    pub fn settings(&self) -> &SessionSettings {
        &self.settings
    }

    pub fn meta_json(&self) -> serde_json::Value {
        let c = &self.bundle.config;
        let label = |r: usize| c.stock_units[r].label.as_str();
        let meta = Meta {
            first_year: c.first_year,
            n_years: c.n_years,
            n_su: c.n_su(),
            n_smolt_ages: c.n_smolt_ages,
            forecast_start_year: c.year_label(c.n_years),
            stock_units: c
                .stock_units
                .iter()
                .map(|s| UnitMeta {
                    label: &s.label,
                    csg: s.csg,
                })
                .collect(),
            management_units: c
                .management_units
                .iter()
                .map(|m| ManagementUnitMeta {
                    name: &m.name,
                    cl_eggs: m.cl_eggs,
                    members: m.members.iter().map(|&r| label(r)).collect(),
                })
                .collect(),
            grid: GridMeta {
                wg_tonnes: DEFAULT_GRID.to_vec(),
                fa_tonnes: DEFAULT_GRID.to_vec(),
            },
            default_horizon: self.settings.default_horizon,
            max_horizon: MAX_HORIZON,
            n_draws: self.n_draws(),
            seed: self.settings.seed,
            egg_basis: self.settings.basis,
        };
        serde_json::to_value(meta).expect("serializable")
    }

    pub fn summaries(&self) -> &[QuantitySummary] {
        &self.summaries
    }

    fn evaluate(&self, wg: f64, fa: f64, horizon: usize) -> Result<Arc<ScenarioRisk>, ServiceError> {
        let key = (wg.to_bits(), fa.to_bits(), horizon);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let risk = Arc::new(self.engine.evaluate(&self.bundle.scenario(wg, fa, horizon))?);
        self.cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| risk.clone());
        Ok(risk)
    }

    /// Report for one scenario.
    pub fn scenario(&self, wg: f64, fa: f64, horizon: usize) -> Result<RiskReport, ServiceError> {
        let risk = self.evaluate(wg, fa, horizon)?;
        Ok(self.engine.wrap(horizon, vec![(*risk).clone()]))
    }

    /// Report over the quota grid, Faroes-major like the command line.
    pub fn grid(&self, wg: &[f64], fa: &[f64], horizon: usize) -> Result<RiskReport, ServiceError> {
        let mut out = Vec::with_capacity(wg.len() * fa.len());
        for &f in fa {
            for &w in wg {
                out.push((*self.evaluate(w, f, horizon)?).clone());
            }
        }
        Ok(self.engine.wrap(horizon, out))
    }
}
