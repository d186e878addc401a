//! Observation layer: lognormal summaries of returns and catches and
//! Dirichlet allocation data, scored against a latent state.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::domain::{ModelConfig, SeaAge};
use crate::lifecycle::transitions::lognormal_sigma2;
use crate::lifecycle::{LatentState, SuState};
use crate::params::ParameterSet;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalSummary {
    pub mean_log: f64,
    pub sd_log: f64,
}

impl LognormalSummary {
    pub fn is_valid(&self) -> bool {
        self.mean_log.is_finite() && self.sd_log.is_finite() && self.sd_log > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnObs {
    pub su: usize,
    pub year: usize,
    pub age: SeaAge,
    pub summary: LognormalSummary,
}

/// Point estimate of a homewater (or delayed-spawner) catch in numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchObs {
    pub su: usize,
    pub year: usize,
    pub age: SeaAge,
    pub catch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeaTotalObs {
    pub fishery: usize,
    pub year: usize,
    pub summary: LognormalSummary,
}

/// Observed proportions of a fishery's catch by stock unit. `year = None`
/// applies to every model year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationObservation {
    pub fishery: usize,
    pub year: Option<usize>,
    /// Pairs of (stock unit, proportion); units absent from the list are
    /// observed at zero.
    pub proportions: Vec<(usize, f64)>,
    /// Overrides the fishery's concentration when set.
    #[serde(default)]
    pub eta: Option<f64>,
}

impl AllocationObservation {
    pub fn sum(&self) -> f64 {
        self.proportions.iter().map(|(_, p)| p).sum()
    }
}

/// All observations. Missing cells are simply absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub returns: Vec<ReturnObs>,
    pub homewater: Vec<CatchObs>,
    pub delayed: Vec<CatchObs>,
    pub sea_totals: Vec<SeaTotalObs>,
    pub allocations: Vec<AllocationObservation>,
}

impl ObservationSet {
    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
            && self.homewater.is_empty()
            && self.delayed.is_empty()
            && self.sea_totals.is_empty()
            && self.allocations.is_empty()
    }
}

/// Normal log density of `x` with mean `mu` and standard deviation `sd`.
#[inline]
pub fn normal_logpdf(x: f64, mu: f64, sd: f64) -> f64 {
    let d = (x - mu) / sd;
    -0.5 * d * d - sd.ln() - LN_SQRT_2PI
}

/// Dirichlet log density of `p` at concentrations `alpha`.
pub fn dirichlet_logpdf(p: &[f64], alpha: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    let mut s = ln_gamma(a0);
    for (&pi, &ai) in p.iter().zip(alpha) {
        s += (ai - 1.0) * pi.ln() - ln_gamma(ai);
    }
    s
}

fn sea_sd(config: &ModelConfig, o: &SeaTotalObs) -> f64 {
    match config.fisheries[o.fishery].fixed_cv {
        Some(cv) => lognormal_sigma2(cv).sqrt(),
        None => o.summary.sd_log,
    }
}

fn returns_term(st: &SuState, year: usize, age: SeaAge, s: &LognormalSummary) -> f64 {
    let n = st.returns[age.idx()][year];
    if !(n > 0.0) {
        return f64::NEG_INFINITY;
    }
    normal_logpdf(s.mean_log, n.ln(), s.sd_log)
}

fn catch_term(predicted: f64, observed: f64, sd: f64) -> f64 {
    if !(predicted > 0.0) {
        return f64::NEG_INFINITY;
    }
    normal_logpdf(observed.ln(), predicted.ln(), sd)
}

/// Returns likelihood: observed log-mean scored against log returns.
pub fn loglik_returns(state: &LatentState, obs: &ObservationSet) -> f64 {
    obs.returns
        .iter()
        .map(|o| returns_term(&state.su[o.su], o.year, o.age, &o.summary))
        .sum()
}

/// Homewater and delayed-spawner catches, lognormal with the configured CV.
pub fn loglik_homewater(state: &LatentState, obs: &ObservationSet, config: &ModelConfig) -> f64 {
    let sd = lognormal_sigma2(config.homewater_cv).sqrt();
    let hw: f64 = obs
        .homewater
        .iter()
        .map(|o| catch_term(state.su[o.su].homewater_catch[o.age.idx()][o.year], o.catch, sd))
        .sum();
    let del: f64 = obs
        .delayed
        .iter()
        .map(|o| catch_term(state.su[o.su].delayed_catch[o.age.idx()][o.year], o.catch, sd))
        .sum();
    hw + del
}

/// Total catch of each mixed-stock fishery, summed over its scope.
pub fn loglik_sea_fishery_totals(
    state: &LatentState,
    obs: &ObservationSet,
    config: &ModelConfig,
) -> f64 {
    obs.sea_totals
        .iter()
        .map(|o| {
            let total = state.total_catch(o.fishery, o.year);
            if !(total > 0.0) {
                return f64::NEG_INFINITY;
            }
            normal_logpdf(o.summary.mean_log, total.ln(), sea_sd(config, o))
        })
        .sum()
}

/// Dirichlet likelihood of one allocation table in one year. Components
/// observed at zero are marginalised out.
pub fn allocation_term(
    state: &LatentState,
    config: &ModelConfig,
    o: &AllocationObservation,
    year: usize,
) -> f64 {
    let f = &config.fisheries[o.fishery];
    let eta = o.eta.unwrap_or(f.dirichlet_eta);
    let positive: Vec<(usize, f64)> = o
        .proportions
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .copied()
        .collect();
    if positive.len() < 2 {
        return 0.0;
    }
    let total: f64 = f.scope.iter().map(|&r| state.su[r].catch(o.fishery, year)).sum();
    if !(total > 0.0) {
        return f64::NEG_INFINITY;
    }
    let obs_sum: f64 = positive.iter().map(|(_, p)| p).sum();
    let mut p = Vec::with_capacity(positive.len());
    let mut alpha = Vec::with_capacity(positive.len());
    for &(r, po) in &positive {
        let pm = state.su[r].catch(o.fishery, year) / total;
        if !(pm > 0.0) {
            return f64::NEG_INFINITY;
        }
        p.push(po / obs_sum);
        alpha.push(eta * pm);
    }
    dirichlet_logpdf(&p, &alpha)
}

pub fn loglik_allocation(state: &LatentState, obs: &ObservationSet, config: &ModelConfig) -> f64 {
    let mut s = 0.0;
    for o in &obs.allocations {
        match o.year {
            Some(y) => s += allocation_term(state, config, o, y),
            None => {
                for y in 0..config.n_years {
                    s += allocation_term(state, config, o, y);
                }
            }
        }
    }
    s
}

/// Sum of the four observation layers.
pub fn total_loglik(
    state: &LatentState,
    _params: &ParameterSet,
    obs: &ObservationSet,
    config: &ModelConfig,
) -> f64 {
    loglik_returns(state, obs)
        + loglik_homewater(state, obs, config)
        + loglik_sea_fishery_totals(state, obs, config)
        + loglik_allocation(state, obs, config)
}

#[derive(Debug, Clone)]
struct SuCells {
    returns: Vec<(usize, SeaAge, LognormalSummary)>,
    homewater: Vec<(usize, usize, f64)>,
    delayed: Vec<(usize, usize, f64)>,
}

/// Sea total of one fishery-year with the normalising constant folded in.
#[derive(Debug, Clone)]
struct SeaCell {
    year: usize,
    mean: f64,
    inv_sd: f64,
    log_norm: f64,
}

/// Allocation table in one year restricted to its positive components.
#[derive(Debug, Clone)]
struct AllocCell {
    year: usize,
    units: Vec<usize>,
    ln_p: Vec<f64>,
    eta: f64,
}

#[derive(Debug, Clone, Default)]
struct FisheryCells {
    scope: Vec<usize>,
    sea: Vec<SeaCell>,
    allocations: Vec<AllocCell>,
}

/// Observations grouped for incremental evaluation: per-unit terms depend
/// on one unit's trajectory, per-fishery terms on all units in its scope.
#[derive(Debug, Clone)]
pub struct IndexedObservations {
    su: Vec<SuCells>,
    hw_sd: f64,
    fisheries: Vec<FisheryCells>,
    empty: bool,
}

fn alloc_cell(config: &ModelConfig, o: &AllocationObservation, year: usize) -> Option<AllocCell> {
    let positive: Vec<(usize, f64)> = o
        .proportions
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .copied()
        .collect();
    if positive.len() < 2 {
        return None;
    }
    let sum: f64 = positive.iter().map(|(_, p)| p).sum();
    Some(AllocCell {
        year,
        units: positive.iter().map(|(r, _)| *r).collect(),
        ln_p: positive.iter().map(|(_, p)| (p / sum).ln()).collect(),
        eta: o.eta.unwrap_or(config.fisheries[o.fishery].dirichlet_eta),
    })
}

impl IndexedObservations {
    pub fn new(config: &ModelConfig, obs: &ObservationSet) -> Self {
        let n = config.n_su();
        let mut su: Vec<SuCells> = (0..n)
            .map(|_| SuCells {
                returns: Vec::new(),
                homewater: Vec::new(),
                delayed: Vec::new(),
            })
            .collect();
        for o in &obs.returns {
            su[o.su].returns.push((o.year, o.age, o.summary));
        }
        for o in &obs.homewater {
            su[o.su].homewater.push((o.year, o.age.idx(), o.catch.ln()));
        }
        for o in &obs.delayed {
            su[o.su].delayed.push((o.year, o.age.idx(), o.catch.ln()));
        }
        let mut fisheries: Vec<FisheryCells> = config
            .fisheries
            .iter()
            .map(|f| FisheryCells {
                scope: f.scope.clone(),
                ..Default::default()
            })
            .collect();
        for o in &obs.sea_totals {
            let sd = sea_sd(config, o);
            fisheries[o.fishery].sea.push(SeaCell {
                year: o.year,
                mean: o.summary.mean_log,
                inv_sd: 1.0 / sd,
                log_norm: -sd.ln() - LN_SQRT_2PI,
            });
        }
        for o in &obs.allocations {
            let years = match o.year {
                Some(y) => y..y + 1,
                None => 0..config.n_years,
            };
            for y in years {
                if let Some(c) = alloc_cell(config, o, y) {
                    fisheries[o.fishery].allocations.push(c);
                }
            }
        }
        Self {
            su,
            hw_sd: lognormal_sigma2(config.homewater_cv).sqrt(),
            fisheries,
            empty: obs.is_empty(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn n_fisheries(&self) -> usize {
        self.fisheries.len()
    }

    /// Returns and homewater terms of unit `r`.
    pub fn su_loglik(&self, r: usize, st: &SuState) -> f64 {
        let cells = &self.su[r];
        let mut s = 0.0;
        for (y, age, summary) in &cells.returns {
            s += returns_term(st, *y, *age, summary);
        }
        for &(y, a, ln_obs) in &cells.homewater {
            let pred = st.homewater_catch[a][y];
            if !(pred > 0.0) {
                return f64::NEG_INFINITY;
            }
            s += normal_logpdf(ln_obs, pred.ln(), self.hw_sd);
        }
        for &(y, a, ln_obs) in &cells.delayed {
            let pred = st.delayed_catch[a][y];
            if !(pred > 0.0) {
                return f64::NEG_INFINITY;
            }
            s += normal_logpdf(ln_obs, pred.ln(), self.hw_sd);
        }
        s
    }

    /// Sea-total and allocation terms of fishery `f`.
    pub fn fishery_loglik(&self, f: usize, state: &LatentState) -> f64 {
        let cells = &self.fisheries[f];
        let mut s = 0.0;
        for c in &cells.sea {
            let total: f64 = cells.scope.iter().map(|&r| state.su[r].catch(f, c.year)).sum();
            if !(total > 0.0) {
                return f64::NEG_INFINITY;
            }
            let d = (c.mean - total.ln()) * c.inv_sd;
            s += -0.5 * d * d + c.log_norm;
        }
        for c in &cells.allocations {
            let total: f64 = cells.scope.iter().map(|&r| state.su[r].catch(f, c.year)).sum();
            if !(total > 0.0) {
                return f64::NEG_INFINITY;
            }
            let scale = c.eta / total;
            let mut a0 = 0.0;
            for (&r, &ln_p) in c.units.iter().zip(&c.ln_p) {
                let alpha = scale * state.su[r].catch(f, c.year);
                if !(alpha > 0.0) {
                    return f64::NEG_INFINITY;
                }
                a0 += alpha;
                s += (alpha - 1.0) * ln_p - libm::lgamma(alpha);
            }
            s += libm::lgamma(a0);
        }
        s
    }

    /// Sea-total and allocation terms of every fishery.
    pub fn shared_loglik(&self, state: &LatentState) -> f64 {
        (0..self.fisheries.len())
            .map(|f| self.fishery_loglik(f, state))
            .sum()
    }

    pub fn total(&self, state: &LatentState) -> f64 {
        if self.empty {
            return 0.0;
        }
        let per: f64 = state
            .su
            .iter()
            .enumerate()
            .map(|(r, st)| self.su_loglik(r, st))
            .sum();
        per + self.shared_loglik(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_density_at_mode() {
        assert_relative_eq!(
            normal_logpdf(2.0, 2.0, 0.1),
            (1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt())).ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            normal_logpdf(1.0, 1.0, 0.2) - normal_logpdf(1.0, 1.0, 0.1),
            -(2.0f64.ln()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn homewater_sd() {
        assert!((lognormal_sigma2(0.05).sqrt() - 0.04997).abs() < 1e-5);
    }

    #[test]
    fn dirichlet_matches_beta_case() {
        // Dirichlet on two components is a Beta density.
        let (a, b) = (3.0, 5.0);
        let x: f64 = 0.3;
        let beta = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
            + (a - 1.0) * x.ln()
            + (b - 1.0) * (1.0 - x).ln();
        assert_relative_eq!(dirichlet_logpdf(&[x, 1.0 - x], &[a, b]), beta, epsilon = 1e-12);
    }
}
