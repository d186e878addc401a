//! Shared domain types: stock units, sea ages, fisheries, fixed biological
//! parameters and the model configuration they compose into.

mod grid;
pub mod tables;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use grid::YearSu;
pub use validate::{validate_config, Violation};

/// Continental stock group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Csg {
    /// North America.
    NA,
    /// Southern Europe.
    SE,
    /// Northern Europe.
    NE,
}

impl Csg {
    pub const ALL: [Csg; 3] = [Csg::NA, Csg::SE, Csg::NE];

    pub fn code(self) -> &'static str {
        match self {
            Csg::NA => "NA",
            Csg::SE => "SE",
            Csg::NE => "NE",
        }
    }

    pub fn parse(s: &str) -> Option<Csg> {
        match s.trim() {
            "NA" => Some(Csg::NA),
            "SE" => Some(Csg::SE),
            "NE" => Some(Csg::NE),
            _ => None,
        }
    }
}

impl fmt::Display for Csg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A stock unit. `index` is 1-based and matches the unit's position in
/// [`ModelConfig::stock_units`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StockUnitId {
    pub index: usize,
    pub csg: Csg,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeaAge {
    #[serde(rename = "1SW")]
    OneSW,
    #[serde(rename = "2SW")]
    TwoSW,
}

impl SeaAge {
    pub const BOTH: [SeaAge; 2] = [SeaAge::OneSW, SeaAge::TwoSW];

    pub fn idx(self) -> usize {
        match self {
            SeaAge::OneSW => 0,
            SeaAge::TwoSW => 1,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            SeaAge::OneSW => "1SW",
            SeaAge::TwoSW => "2SW",
        }
    }

    pub fn parse(s: &str) -> Option<SeaAge> {
        match s.trim() {
            "1SW" => Some(SeaAge::OneSW),
            "2SW" => Some(SeaAge::TwoSW),
            _ => None,
        }
    }
}

impl fmt::Display for SeaAge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Stage a marine fishery operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeaStage {
    /// First-winter fish that will return as 1SW this year.
    #[serde(rename = "1SWm")]
    OneSwMaturing,
    /// First-winter fish that stay at sea another winter.
    #[serde(rename = "1SWnm")]
    OneSwNonMaturing,
    /// Second-winter fish on their return migration.
    #[serde(rename = "2SW")]
    TwoSw,
}

impl SeaStage {
    pub fn code(self) -> &'static str {
        match self {
            SeaStage::OneSwMaturing => "1SWm",
            SeaStage::OneSwNonMaturing => "1SWnm",
            SeaStage::TwoSw => "2SW",
        }
    }

    pub fn parse(s: &str) -> Option<SeaStage> {
        match s.trim() {
            "1SWm" => Some(SeaStage::OneSwMaturing),
            "1SWnm" => Some(SeaStage::OneSwNonMaturing),
            "2SW" => Some(SeaStage::TwoSw),
            _ => None,
        }
    }
}

impl fmt::Display for SeaStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Life stages tracked by the abundance lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageId {
    /// Eggs.
    N1,
    /// Total smolts of a cohort.
    N2,
    /// Smolts of a cohort by age at migration.
    N2Prime,
    /// Smolts migrating in a year.
    N3,
    /// Pre-fishery abundance.
    N4,
    /// Maturing PFA.
    N5,
    /// 1SW maturing after the first Faroes checkpoint.
    N5_1,
    /// 1SW returns.
    N6,
    /// 1SW spawners.
    N7,
    /// Non-maturing PFA.
    N8,
    /// Non-maturing after the first-winter Faroes checkpoint.
    N8_1,
    /// 2SW fish at the second-winter Faroes checkpoint.
    N8_2,
    /// 2SW returns.
    N9,
    /// 2SW spawners.
    N10,
    /// Abundance entering a mixed-stock fishery checkpoint.
    FisheryCheckpoint,
}

/// Fixed freshwater and marine parameters of one stock unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedBioParams {
    /// Eggs per 1SW spawner (female share included).
    pub eggs1: f64,
    /// Eggs per 2SW spawner.
    pub eggs2: f64,
    /// Smolt-age proportions, index 0 is age 1.
    pub psm: Vec<f64>,
    /// Mean egg-to-smolt survival.
    pub theta1_mean: f64,
    /// Inter-annual CV of egg-to-smolt survival.
    pub theta1_cv: f64,
    /// Natural mortality after the PFA stage, per month.
    pub natural_mortality: f64,
    /// Dirichlet sample size for smolt-age proportions.
    pub eta_sample: f64,
}

impl FixedBioParams {
    pub const THETA1_MEAN: f64 = 0.007;
    pub const THETA1_CV: f64 = 0.4;
    pub const MONTHLY_M: f64 = 0.03;
    pub const ETA_SAMPLE: f64 = 100.0;

    pub fn new(eggs1: f64, eggs2: f64, psm: Vec<f64>) -> Self {
        Self {
            eggs1,
            eggs2,
            psm,
            theta1_mean: Self::THETA1_MEAN,
            theta1_cv: Self::THETA1_CV,
            natural_mortality: Self::MONTHLY_M,
            eta_sample: Self::ETA_SAMPLE,
        }
    }

    /// Indices (0-based) of smolt ages with positive proportion.
    pub fn age_support(&self) -> Vec<usize> {
        self.psm
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(a, _)| a)
            .collect()
    }

    pub fn eggs_for(&self, age: SeaAge) -> f64 {
        match age {
            SeaAge::OneSW => self.eggs1,
            SeaAge::TwoSW => self.eggs2,
        }
    }
}

/// How the exploitation rate of a mixed-stock fishery varies across the
/// stock units in its scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarvestMode {
    PerSU,
    HomogeneousAcrossSU,
    HomogeneousExceptLabrador,
    ZeroForLabrador,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocationDataMode {
    None,
    FixedProportions,
    AnnualProportions,
}

/// Fisheries subject to tonnage quotas in catch-option scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuotaGroup {
    WestGreenland,
    Faroes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherySpec {
    pub id: String,
    pub sea_stage: SeaStage,
    /// 0-based positions of the exploitable stock units.
    pub scope: Vec<usize>,
    pub harvest_mode: HarvestMode,
    pub allocation_data_mode: AllocationDataMode,
    /// Concentration of the allocation Dirichlet likelihood.
    #[serde(default = "default_eta")]
    pub dirichlet_eta: f64,
    /// When set, total-catch observations use this CV instead of the
    /// supplied log-scale SD.
    #[serde(default)]
    pub fixed_cv: Option<f64>,
    #[serde(default)]
    pub quota_group: Option<QuotaGroup>,
}

fn default_eta() -> f64 {
    FixedBioParams::ETA_SAMPLE
}

/// Harvest-rate slot a stock unit maps to inside a fishery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarvestSlot {
    Param(usize),
    Zero,
}

impl FisherySpec {
    /// Number of free harvest rates per year.
    pub fn n_slots(&self, labrador: Option<usize>) -> usize {
        match self.harvest_mode {
            HarvestMode::PerSU => self.scope.len(),
            HarvestMode::HomogeneousAcrossSU | HarvestMode::ZeroForLabrador => 1,
            HarvestMode::HomogeneousExceptLabrador => match labrador {
                Some(lb) if self.scope.contains(&lb) && self.scope.len() > 1 => 2,
                _ => 1,
            },
        }
    }

    /// Slot of stock unit `su`, `None` when outside the scope.
    pub fn slot_of(&self, su: usize, labrador: Option<usize>) -> Option<HarvestSlot> {
        let pos = self.scope.iter().position(|&s| s == su)?;
        Some(match self.harvest_mode {
            HarvestMode::PerSU => HarvestSlot::Param(pos),
            HarvestMode::HomogeneousAcrossSU => HarvestSlot::Param(0),
            HarvestMode::HomogeneousExceptLabrador => {
                if Some(su) == labrador && self.n_slots(labrador) == 2 {
                    HarvestSlot::Param(1)
                } else {
                    HarvestSlot::Param(0)
                }
            }
            HarvestMode::ZeroForLabrador => {
                if Some(su) == labrador {
                    HarvestSlot::Zero
                } else {
                    HarvestSlot::Param(0)
                }
            }
        })
    }

    pub fn covers(&self, su: usize) -> bool {
        self.scope.contains(&su)
    }
}

/// One fishery checkpoint on a migration route, preceded by a period of
/// natural mortality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub fishery: String,
    pub delta_months_before: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationPath {
    pub steps: Vec<PathStep>,
    /// Months between the last checkpoint and return to home waters.
    pub delta_to_return: f64,
}

impl MigrationPath {
    pub fn total_months(&self) -> f64 {
        self.steps.iter().map(|s| s.delta_months_before).sum::<f64>() + self.delta_to_return
    }

    /// Index of the first step reached one year or more after the PFA date.
    pub fn year_split(&self) -> usize {
        let mut months = 0.0;
        for (i, s) in self.steps.iter().enumerate() {
            months += s.delta_months_before;
            if months >= 12.0 {
                return i;
            }
        }
        self.steps.len()
    }
}

/// Sequence of fisheries met by the maturing and non-maturing components
/// of one continental stock group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsgRoutes {
    pub csg: Csg,
    pub maturing: MigrationPath,
    pub non_maturing: MigrationPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManagementUnit {
    pub name: String,
    /// Conservation limit in eggs.
    pub cl_eggs: f64,
    /// 0-based stock-unit positions summed for comparison with the CL.
    pub members: Vec<usize>,
}

/// Medians of the diffuse priors on initial-condition abundances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    /// Smolts migrating per year before the first in-model cohort, per SU.
    pub smolts: Vec<f64>,
    /// Non-maturing fish returning as 2SW in the first model year, per SU.
    pub non_maturing: Vec<f64>,
    #[serde(default = "one")]
    pub cv: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Calendar year of model year 0 (labels only).
    pub first_year: i32,
    pub n_years: usize,
    /// Number of smolt-age classes (at most 6).
    pub n_smolt_ages: usize,
    pub stock_units: Vec<StockUnitId>,
    pub bio: Vec<FixedBioParams>,
    pub fisheries: Vec<FisherySpec>,
    pub routes: Vec<CsgRoutes>,
    /// 0-based position of Labrador, when modelled.
    #[serde(default)]
    pub labrador: Option<usize>,
    /// CV of the small lognormal jitter on near-deterministic transitions.
    #[serde(default = "default_jitter")]
    pub process_jitter_cv: f64,
    /// CV of homewater catch observations.
    #[serde(default = "default_hw_cv")]
    pub homewater_cv: f64,
    /// Delayed-spawning proportions, one lattice per sea age.
    pub delayed_spawning: [YearSu; 2],
    pub stocking_2sw: YearSu,
    pub initial_guess: InitialGuess,
    pub management_units: Vec<ManagementUnit>,
    /// Wishart degrees of freedom; defaults to the number of stock units.
    #[serde(default)]
    pub wishart_dof: Option<f64>,
}

fn default_jitter() -> f64 {
    0.01
}

fn default_hw_cv() -> f64 {
    0.05
}

impl ModelConfig {
    pub fn n_su(&self) -> usize {
        self.stock_units.len()
    }

    pub fn fishery_index(&self, id: &str) -> Option<usize> {
        self.fisheries.iter().position(|f| f.id == id)
    }

    pub fn su_index(&self, label: &str) -> Option<usize> {
        self.stock_units.iter().position(|s| s.label == label)
    }

    pub fn routes_for(&self, csg: Csg) -> Option<&CsgRoutes> {
        self.routes.iter().find(|r| r.csg == csg)
    }

    pub fn wishart_dof(&self) -> f64 {
        self.wishart_dof.unwrap_or(self.n_su() as f64)
    }

    /// Number of migration years whose smolts are initial-condition
    /// parameters: migration years -1 through `n_smolt_ages`.
    pub fn n_initial_smolt_years(&self) -> usize {
        (self.n_smolt_ages + 2).min(self.n_years)
    }

    pub fn csg_of(&self, su: usize) -> Csg {
        self.stock_units[su].csg
    }

    /// Management units grouped by continental stock group.
    pub fn units_by_csg(&self) -> Vec<(Csg, Vec<usize>)> {
        Csg::ALL
            .iter()
            .filter_map(|&csg| {
                let units: Vec<usize> = self
                    .management_units
                    .iter()
                    .enumerate()
                    .filter(|(_, u)| u.members.first().map(|&m| self.csg_of(m)) == Some(csg))
                    .map(|(i, _)| i)
                    .collect();
                (!units.is_empty()).then_some((csg, units))
            })
            .collect()
    }

    pub fn year_label(&self, t: usize) -> i32 {
        self.first_year + t as i32
    }

    /// Scale every psm row whose sum is within `tol` of one onto the
    /// simplex. Returns the stock units that were rescaled.
    pub fn normalize_psm(&mut self, tol: f64) -> Vec<usize> {
        let mut changed = Vec::new();
        for (r, bio) in self.bio.iter_mut().enumerate() {
            let s: f64 = bio.psm.iter().sum();
            if s > 0.0 && (s - 1.0).abs() <= tol && (s - 1.0).abs() > 1e-12 {
                bio.psm.iter_mut().for_each(|p| *p /= s);
                changed.push(r);
            }
        }
        changed
    }
}

/// Logistic function.
pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
