use serde::{Deserialize, Serialize};

use crate::domain::{SeaAge, StageId, YearSu};

/// Abundance at one mixed-stock fishery checkpoint, by catch year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisheryNode {
    pub fishery: usize,
    pub pre: Vec<f64>,
    pub catch: Vec<f64>,
    pub escapement: Vec<f64>,
}

/// Latent trajectory of one stock unit. Year-indexed vectors have one entry
/// per model year unless stated otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuState {
    /// Logit post-smolt survival and maturation by PFA year.
    pub logit: [Vec<f64>; 2],
    /// Eggs by spawning year (cohort).
    pub eggs: Vec<f64>,
    /// Total smolts by cohort.
    pub smolts: Vec<f64>,
    /// Smolt-age proportions, `n_ages` per cohort.
    pub smolt_split: Vec<f64>,
    /// Smolts by cohort and age, `n_ages` per cohort.
    pub smolts_by_age: Vec<f64>,
    /// Migrating smolts for migration years -1 ..= T + n_ages; entry `i` is
    /// year `i - 1`.
    pub migrating: Vec<f64>,
    pub pfa: Vec<f64>,
    pub maturing: Vec<f64>,
    pub non_maturing: Vec<f64>,
    /// Non-maturing fish crossing into their second sea year, by PFA year.
    pub non_maturing_boundary: Vec<f64>,
    /// Non-maturing fish from PFA year -1 at the same point.
    pub non_maturing_initial: f64,
    pub returns: [Vec<f64>; 2],
    pub spawners: [Vec<f64>; 2],
    /// Homewater exploitation rate applied to returns.
    pub h_hw: [Vec<f64>; 2],
    pub homewater_catch: [Vec<f64>; 2],
    pub delayed_catch: [Vec<f64>; 2],
    /// False when anchored rates fell outside the unit interval.
    pub feasible: bool,
    pub nodes: Vec<FisheryNode>,
    /// Node position per fishery index.
    pub node_of: Vec<Option<usize>>,
}

impl SuState {
    pub fn new(n_years: usize, n_ages: usize, n_fisheries: usize) -> Self {
        let z = || vec![0.0; n_years];
        Self {
            logit: [z(), z()],
            eggs: z(),
            smolts: z(),
            smolt_split: vec![0.0; n_years * n_ages],
            smolts_by_age: vec![0.0; n_years * n_ages],
            migrating: vec![0.0; n_years + n_ages + 2],
            pfa: z(),
            maturing: z(),
            non_maturing: z(),
            non_maturing_boundary: z(),
            non_maturing_initial: 0.0,
            returns: [z(), z()],
            spawners: [z(), z()],
            h_hw: [z(), z()],
            homewater_catch: [z(), z()],
            delayed_catch: [z(), z()],
            feasible: true,
            nodes: Vec::new(),
            node_of: vec![None; n_fisheries],
        }
    }

    /// Smolts migrating in year `s` (may be -1).
    pub fn migrating_in(&self, s: i64) -> f64 {
        self.migrating[(s + 1) as usize]
    }

    pub fn node(&self, fishery: usize) -> Option<&FisheryNode> {
        self.node_of[fishery].map(|i| &self.nodes[i])
    }

    pub fn catch(&self, fishery: usize, year: usize) -> f64 {
        self.node(fishery).map_or(0.0, |n| n.catch[year])
    }

    pub fn returns(&self, age: SeaAge) -> &[f64] {
        &self.returns[age.idx()]
    }

    pub fn spawners(&self, age: SeaAge) -> &[f64] {
        &self.spawners[age.idx()]
    }
}

/// Abundance lattice of every stock unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub n_years: usize,
    pub su: Vec<SuState>,
}

impl LatentState {
    pub fn n_su(&self) -> usize {
        self.su.len()
    }

    /// Year-by-unit view of a stage. Stages defined by cohort and age or by
    /// fishery checkpoint have no single lattice and return `None`.
    pub fn lattice(&self, stage: StageId) -> Option<YearSu> {
        let pick = |r: usize, t: usize| -> f64 {
            let s = &self.su[r];
            match stage {
                StageId::N1 => s.eggs[t],
                StageId::N2 => s.smolts[t],
                StageId::N3 => s.migrating_in(t as i64),
                StageId::N4 => s.pfa[t],
                StageId::N5 => s.maturing[t],
                StageId::N8 => s.non_maturing[t],
                StageId::N6 => s.returns[0][t],
                StageId::N9 => s.returns[1][t],
                StageId::N7 => s.spawners[0][t],
                StageId::N10 => s.spawners[1][t],
                _ => f64::NAN,
            }
        };
        match stage {
            StageId::N2Prime
            | StageId::N5_1
            | StageId::N8_1
            | StageId::N8_2
            | StageId::FisheryCheckpoint => None,
            _ => Some(YearSu::from_fn(self.n_years, self.n_su(), |t, r| pick(r, t))),
        }
    }

    /// Total catch of `fishery` in `year` over all units.
    pub fn total_catch(&self, fishery: usize, year: usize) -> f64 {
        self.su.iter().map(|s| s.catch(fishery, year)).sum()
    }

    /// Every fishery node as (unit, fishery, year, pre, catch, escapement).
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, usize, f64, f64, f64)> + '_ {
        self.su.iter().enumerate().flat_map(|(r, s)| {
            s.nodes.iter().flat_map(move |n| {
                (0..n.pre.len()).map(move |t| (r, n.fishery, t, n.pre[t], n.catch[t], n.escapement[t]))
            })
        })
    }

    pub fn all_finite_nonnegative(&self) -> bool {
        self.su.iter().all(|s| {
            s.eggs
                .iter()
                .chain(&s.smolts)
                .chain(&s.migrating)
                .chain(&s.pfa)
                .chain(&s.maturing)
                .chain(&s.non_maturing)
                .chain(s.returns.iter().flatten())
                .chain(s.spawners.iter().flatten())
                .all(|v| v.is_finite() && *v >= 0.0)
        })
    }
}
