use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::domain::tables::{FA_1SWM, FA_1SWNM, FA_2SW, WG_1SWNM};
use crate::domain::{ModelConfig, QuotaGroup};
use crate::likelihood::ObservationSet;

/// Default quota values, in tonnes, for both fisheries.
pub const DEFAULT_GRID: [f64; 6] = [0.0, 50.0, 100.0, 150.0, 200.0, 250.0];

/// Number of recent years averaged to freeze allocations and catches.
pub const RECENT_YEARS: usize = 5;

/// Split of a West Greenland quota between the Greenland fishery and the
/// North American and European fisheries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharingFraction {
    /// Share of the total removal reserved for North America and Europe.
    pub na_eu_fraction: f64,
}

impl Default for SharingFraction {
    fn default() -> Self {
        Self {
            na_eu_fraction: 0.4,
        }
    }
}

impl SharingFraction {
    /// (WG share, NA&E share, total removal) in tonnes for a quota: the
    /// quota is the NA&E share and the total is quota / fraction.
    pub fn split(&self, quota_tonnes: f64) -> (f64, f64, f64) {
        let total = quota_tonnes / self.na_eu_fraction;
        ((1.0 - self.na_eu_fraction) * total, quota_tonnes, total)
    }
}

/// Sharing-fraction arithmetic with the default fraction.
pub fn apply_sharing_fraction(quota_tonnes: f64) -> (f64, f64, f64) {
    SharingFraction::default().split(quota_tonnes)
}

pub fn tonnes_to_fish(tonnes: f64, mean_weight_per_fish: f64) -> f64 {
    tonnes / mean_weight_per_fish
}

/// Mean weight in tonnes per fish, keyed by fishery id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeanWeights(pub BTreeMap<String, f64>);

impl MeanWeights {
    /// Placeholder weights for the standard quota fisheries. Replace with
    /// assessment values for real use.
    pub fn placeholders() -> Self {
        Self(
            [
                (WG_1SWNM, 0.003),
                (FA_1SWM, 0.0025),
                (FA_1SWNM, 0.003),
                (FA_2SW, 0.0055),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        )
    }

    pub fn get(&self, fishery: &str) -> Option<f64> {
        self.0.get(fishery).copied()
    }
}

impl Default for MeanWeights {
    fn default() -> Self {
        Self::placeholders()
    }
}

/// Fixed-catch scenario at West Greenland and the Faroes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchScenario {
    pub wg_quota_tonnes: f64,
    pub fa_quota_tonnes: f64,
    pub horizon_years: usize,
    #[serde(default)]
    pub mean_weights: MeanWeights,
    #[serde(default)]
    pub sharing: SharingFraction,
}

impl CatchScenario {
    pub fn new(wg: f64, fa: f64, horizon: usize) -> Self {
        Self {
            wg_quota_tonnes: wg,
            fa_quota_tonnes: fa,
            horizon_years: horizon,
            mean_weights: MeanWeights::placeholders(),
            sharing: SharingFraction::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        for (name, v) in [
            ("wg_quota_tonnes", self.wg_quota_tonnes),
            ("fa_quota_tonnes", self.fa_quota_tonnes),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ForecastError::InvalidScenario(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        if self.horizon_years == 0 {
            return Err(ForecastError::InvalidScenario(
                "horizon_years must be at least 1".into(),
            ));
        }
        if let Some((k, w)) = self.mean_weights.0.iter().find(|(_, w)| !(**w > 0.0)) {
            return Err(ForecastError::InvalidScenario(format!(
                "mean weight of {k} must be positive, got {w}"
            )));
        }
        let f = self.sharing.na_eu_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(ForecastError::InvalidScenario(format!(
                "sharing fraction must lie in (0, 1], got {f}"
            )));
        }
        Ok(())
    }
}

/// Cartesian product of quota values, Faroes-major.
pub fn scenario_grid(wg: &[f64], fa: &[f64], template: &CatchScenario) -> Vec<CatchScenario> {
    fa.iter()
        .flat_map(|&f| {
            wg.iter().map(move |&w| CatchScenario {
                wg_quota_tonnes: w,
                fa_quota_tonnes: f,
                ..template.clone()
            })
        })
        .collect()
}

/// Allocation proportions and catch levels frozen at recent averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenInputs {
    /// Share of each fishery's catch taken from each stock unit.
    pub allocation: Vec<Vec<f64>>,
    /// Mean observed catch in numbers per fishery over the recent years;
    /// `None` where unobserved.
    pub recent_catch: Vec<Option<f64>>,
}

impl FrozenInputs {
    /// Averages over the last [`RECENT_YEARS`] model years. Fisheries without
    /// allocation data share uniformly over their harvested scope.
    pub fn from_data(config: &ModelConfig, obs: &ObservationSet) -> Self {
        let t = config.n_years;
        let from = t.saturating_sub(RECENT_YEARS);
        let n = config.n_su();
        let allocation = config
            .fisheries
            .iter()
            .enumerate()
            .map(|(f, spec)| {
                let mut acc = vec![0.0; n];
                let mut count = 0usize;
                for o in obs.allocations.iter().filter(|o| o.fishery == f) {
                    let weight = match o.year {
                        Some(y) if y >= from => 1,
                        Some(_) => 0,
                        None => RECENT_YEARS,
                    };
                    if weight == 0 {
                        continue;
                    }
                    let s = o.sum();
                    if s <= 0.0 {
                        continue;
                    }
                    for &(r, p) in &o.proportions {
                        acc[r] += weight as f64 * p / s;
                    }
                    count += weight;
                }
                if count == 0 {
                    let harvested: Vec<usize> = spec
                        .scope
                        .iter()
                        .copied()
                        .filter(|&r| {
                            matches!(
                                spec.slot_of(r, config.labrador),
                                Some(crate::domain::HarvestSlot::Param(_))
                            )
                        })
                        .collect();
                    for &r in &harvested {
                        acc[r] = 1.0 / harvested.len() as f64;
                    }
                } else {
                    acc.iter_mut().for_each(|a| *a /= count as f64);
                }
                acc
            })
            .collect();
        let recent_catch = (0..config.fisheries.len())
            .map(|f| {
                let v: Vec<f64> = obs
                    .sea_totals
                    .iter()
                    .filter(|o| o.fishery == f && o.year >= from)
                    .map(|o| o.summary.mean_log.exp())
                    .collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        Self {
            allocation,
            recent_catch,
        }
    }
}

/// Per-fishery catch target in fish for one scenario, constant over the
/// horizon. Non-quota fisheries get zero.
pub fn fishery_targets(
    config: &ModelConfig,
    frozen: &FrozenInputs,
    scenario: &CatchScenario,
) -> Result<Vec<f64>, ForecastError> {
    let (_, _, wg_total) = scenario.sharing.split(scenario.wg_quota_tonnes);
    let mut targets = vec![0.0; config.fisheries.len()];
    for (group, tonnes) in [
        (QuotaGroup::WestGreenland, wg_total),
        (QuotaGroup::Faroes, scenario.fa_quota_tonnes),
    ] {
        let members: Vec<usize> = config
            .fisheries
            .iter()
            .enumerate()
            .filter(|(_, f)| f.quota_group == Some(group))
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut weights = Vec::with_capacity(members.len());
        for &f in &members {
            let id = &config.fisheries[f].id;
            let w = scenario
                .mean_weights
                .get(id)
                .ok_or_else(|| ForecastError::MissingMeanWeight(id.clone()))?;
            weights.push(w);
        }
        // tonnage split by recent catch in tonnes, evenly when unobserved
        let shares: Vec<f64> = if members.iter().all(|&f| frozen.recent_catch[f].is_some()) {
            let tonnage: Vec<f64> = members
                .iter()
                .zip(&weights)
                .map(|(&f, w)| w * frozen.recent_catch[f].unwrap_or(0.0))
                .collect();
            let s: f64 = tonnage.iter().sum();
            if s > 0.0 {
                tonnage.iter().map(|x| x / s).collect()
            } else {
                vec![1.0 / members.len() as f64; members.len()]
            }
        } else {
            vec![1.0 / members.len() as f64; members.len()]
        };
        for ((&f, w), share) in members.iter().zip(&weights).zip(&shares) {
            targets[f] = tonnes_to_fish(tonnes * share, *w);
        }
    }
    Ok(targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sharing_examples() {
        assert_eq!(apply_sharing_fraction(100.0), (150.0, 100.0, 250.0));
        assert_eq!(apply_sharing_fraction(0.0), (0.0, 0.0, 0.0));
        assert_eq!(apply_sharing_fraction(200.0), (300.0, 200.0, 500.0));
    }

    #[test]
    fn tonnes_examples() {
        assert_eq!(tonnes_to_fish(0.0, 0.003), 0.0);
        assert!((tonnes_to_fish(250.0, 0.003) - 83_333.333_333).abs() < 1e-3);
        assert_eq!(tonnes_to_fish(100.0, 0.004), tonnes_to_fish(100.0, 0.002) / 2.0);
    }

    #[test]
    fn grids() {
        let t = CatchScenario::new(0.0, 0.0, 5);
        assert_eq!(scenario_grid(&DEFAULT_GRID, &DEFAULT_GRID, &t).len(), 36);
        assert_eq!(scenario_grid(&[10.0], &[20.0], &t).len(), 1);
        let g = scenario_grid(&[0.0], &[0.0, 50.0], &t);
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].wg_quota_tonnes, g[0].fa_quota_tonnes), (0.0, 0.0));
        assert_eq!((g[1].wg_quota_tonnes, g[1].fa_quota_tonnes), (0.0, 50.0));
        let g = scenario_grid(&[0.0, 50.0], &[0.0, 50.0], &t);
        assert_eq!(g[1].wg_quota_tonnes, 50.0);
        assert_eq!(g[1].fa_quota_tonnes, 0.0);
    }

    #[test]
    fn scenario_validation() {
        assert!(CatchScenario::new(-5.0, 0.0, 5).validate().is_err());
        assert!(CatchScenario::new(0.0, f64::NAN, 5).validate().is_err());
        assert!(CatchScenario::new(0.0, 0.0, 0).validate().is_err());
        assert!(CatchScenario::new(50.0, 250.0, 5).validate().is_ok());
    }
}
