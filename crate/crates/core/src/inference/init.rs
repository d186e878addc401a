//! Starting points for chains: prior draws pulled toward the data.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::InferenceError;
use crate::domain::{inv_logit, logit, HarvestSlot, ModelConfig, SeaAge};
use crate::lifecycle::{reconstruct, LatentState};
use crate::likelihood::{IndexedObservations, ObservationSet};
use crate::params::{Layout, ParameterSet, PriorKind, Walk};

const ATTEMPTS: usize = 20;
const MAX_ROUNDS: usize = 40;
/// Log-likelihood gain below which matching rounds stop.
const ROUND_TOLERANCE: f64 = 0.1;
/// Survival assumed when sizing initial smolt abundances.
const REFERENCE_SURVIVAL: f64 = 0.06;

/// Set the logit trajectory of every unit for walk `w`, solving for the
/// innovations under the current covariance factor.
pub fn set_logit_trajectories(params: &mut ParameterSet, w: Walk, traj: &[Vec<f64>]) {
    let lay = params.layout.clone();
    let n = lay.n_su;
    let t = lay.n_years;
    let l = params.walk(w).factor().clone();
    for r in 0..n {
        params.values[lay.su[r].first[w.idx()]] = traj[r][0];
    }
    for y in 1..t {
        let mut z = vec![0.0; n];
        for r in 0..n {
            let mut s = traj[r][y] - traj[r][y - 1];
            for (j, zj) in z.iter().enumerate().take(r) {
                s -= l[(r, j)] * zj;
            }
            z[r] = s / l[(r, r)];
        }
        for (r, zr) in z.into_iter().enumerate() {
            params.values[lay.z_index(w, r, y)] = zr;
        }
    }
}

fn clamp_logit(p: f64, lo: f64, hi: f64) -> f64 {
    logit(p.clamp(lo, hi))
}

/// Observed returns medians, unit x age x year.
fn observed_returns(config: &ModelConfig, obs: &ObservationSet) -> Vec<[Vec<Option<f64>>; 2]> {
    let mut out: Vec<[Vec<Option<f64>>; 2]> = (0..config.n_su())
        .map(|_| [vec![None; config.n_years], vec![None; config.n_years]])
        .collect();
    for o in &obs.returns {
        out[o.su][o.age.idx()][o.year] = Some(o.summary.mean_log.exp());
    }
    out
}

/// One round of moving survival, maturation and initial conditions so that
/// returns match their observed medians.
fn match_returns(
    config: &ModelConfig,
    params: &mut ParameterSet,
    state: &LatentState,
    target: &[[Vec<Option<f64>>; 2]],
) {
    let lay = params.layout.clone();
    let t_max = config.n_years;
    let mut traj = [Vec::new(), Vec::new()];
    for (r, st) in state.su.iter().enumerate() {
        let r1 = |t: usize| target[r][0][t].unwrap_or(st.returns[0][t]);
        let r2 = |t: usize| target[r][1][t].unwrap_or(st.returns[1][t]);
        let mut th3 = vec![0.0; t_max];
        let mut th4 = vec![0.0; t_max];
        for t in 0..t_max {
            let s1 = if st.maturing[t] > 0.0 {
                st.returns[0][t] / st.maturing[t]
            } else {
                0.5
            };
            let mat = r1(t) / s1.max(1e-6);
            let nm = if t + 1 < t_max && st.non_maturing[t] > 0.0 {
                let s2 = st.returns[1][t + 1] / st.non_maturing[t];
                r2(t + 1) / s2.max(1e-6)
            } else {
                let prev = if t > 0 { th4[t - 1] } else { 0.5 };
                mat * (1.0 - prev) / prev
            };
            let pfa = mat + nm;
            th4[t] = (mat / pfa).clamp(0.02, 0.98);
            let mig = st.migrating[t];
            th3[t] = if mig > 0.0 {
                (pfa / mig).clamp(1e-3, 0.6)
            } else {
                REFERENCE_SURVIVAL
            };
            if t < lay.n_init_smolts {
                let i = lay.su[r].init_smolts.start + t;
                let own = params.values[i].exp();
                let cohorts = (mig - own).max(0.0);
                let needed = pfa / REFERENCE_SURVIVAL;
                let v = (needed - cohorts).max(0.05 * needed);
                params.values[i] = v.ln();
                th3[t] = (pfa / (cohorts + v)).clamp(1e-3, 0.6);
            }
        }
        if st.returns[1][0] > 0.0 {
            let ratio = st.returns[1][0] / st.non_maturing_initial;
            let i = lay.su[r].init_non_maturing;
            params.values[i] = (r2(0) / ratio.max(1e-6)).ln();
        }
        traj[0].push(th3.iter().map(|&p| logit(p)).collect::<Vec<_>>());
        traj[1].push(th4.iter().map(|&p| logit(p)).collect::<Vec<_>>());
    }
    set_logit_trajectories(params, Walk::Survival, &traj[0]);
    set_logit_trajectories(params, Walk::Maturation, &traj[1]);
}

/// Harvest rates implied by observed catches and current abundances.
fn match_catches(
    config: &ModelConfig,
    obs: &ObservationSet,
    params: &mut ParameterSet,
    state: &LatentState,
) {
    let lay = params.layout.clone();
    for o in &obs.homewater {
        let a = o.age.idx();
        let avail = (1.0 - config.delayed_spawning[a].get(o.year, o.su))
            * state.su[o.su].returns[a][o.year];
        if avail > 0.0 {
            let i = lay.homewater_index(o.su, o.year, o.age);
            params.values[i] = clamp_logit(o.catch / avail, 1e-3, 0.95);
        }
    }
    for o in &obs.delayed {
        if let Some(i) = lay.su[o.su].delayed[o.year][o.age.idx()] {
            let a = o.age.idx();
            let t = o.year;
            let avail = (1.0 - params.homewater_rate(o.su, t - 1, SeaAge::BOTH[a]))
                * config.delayed_spawning[a].get(t - 1, o.su)
                * state.su[o.su].returns[a][t - 1];
            if avail > 0.0 {
                params.values[i] = clamp_logit(o.catch / avail, 1e-3, 0.95);
            }
        }
    }
    for o in &obs.sea_totals {
        let f = o.fishery;
        let spec = &config.fisheries[f];
        let fl = &lay.fisheries[f];
        let total = o.summary.mean_log.exp();
        let pre = |r: usize| {
            state.su[r]
                .node(f)
                .map_or(0.0, |nd| nd.pre[o.year])
        };
        let alloc = obs
            .allocations
            .iter()
            .find(|a| a.fishery == f && (a.year == Some(o.year) || a.year.is_none()));
        let all_pre: f64 = spec
            .scope
            .iter()
            .filter(|&&r| matches!(fl.slot_of[r], Some(HarvestSlot::Param(_))))
            .map(|&r| pre(r))
            .sum();
        for k in 0..fl.n_slots {
            let members: Vec<usize> = spec
                .scope
                .iter()
                .copied()
                .filter(|&r| fl.slot_of[r] == Some(HarvestSlot::Param(k)))
                .collect();
            let slot_pre: f64 = members.iter().map(|&r| pre(r)).sum();
            if slot_pre <= 0.0 {
                continue;
            }
            let share = match alloc {
                Some(a) => {
                    let s = a.sum();
                    a.proportions
                        .iter()
                        .filter(|(r, _)| members.contains(r))
                        .map(|(_, p)| p / s)
                        .sum::<f64>()
                }
                None => slot_pre / all_pre.max(f64::MIN_POSITIVE),
            };
            let i = lay.sea_index(f, o.year, k);
            params.values[i] = clamp_logit(total * share / slot_pre, 1e-4, 0.9);
        }
    }
}

fn loglik(config: &ModelConfig, idx: &IndexedObservations, p: &ParameterSet) -> Option<(LatentState, f64)> {
    let st = reconstruct(config, p).ok()?;
    let ll = idx.total(&st);
    ll.is_finite().then_some((st, ll))
}

/// Starting point of one chain: a prior draw whose trajectories are pulled
/// toward observed returns and catches. Chains differ through their prior
/// draws of covariances and process noise and a small jitter on homewater
/// rates and initial smolts.
pub fn init_chain<R: Rng + ?Sized>(
    config: &ModelConfig,
    obs: &ObservationSet,
    rng: &mut R,
) -> Result<ParameterSet, InferenceError> {
    let layout = Arc::new(Layout::new(config));
    let dof = config.wishart_dof();
    if obs.is_empty() {
        return Ok(ParameterSet::sample_prior(layout, dof, rng));
    }
    let idx = IndexedObservations::new(config, obs);
    let target = observed_returns(config, obs);
    let n = config.n_su();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..ATTEMPTS {
        let mut p = ParameterSet::sample_prior(layout.clone(), dof, rng);
        // moderate covariances so the back-calculated innovations stay O(1)
        for w in Walk::BOTH {
            let scale: f64 = 0.1 + 0.2 * rng.random::<f64>();
            let prec = DMatrix::<f64>::identity(n, n) / (scale * scale);
            p.set_precision(w, prec).map_err(|e| InferenceError::Init(e.to_string()))?;
        }
        for i in layout.process_noise() {
            if layout.priors[i] == PriorKind::StdNormal {
                p.values[i] *= 0.5;
            }
        }
        for s in &layout.su {
            for i in s.homewater.clone() {
                p.values[i] = logit(0.2);
            }
            for i in s.delayed.iter().flatten().flatten() {
                p.values[*i] = logit(0.2);
            }
        }
        for f in &layout.fisheries {
            for i in f.range.clone() {
                p.values[i] = logit(0.05);
            }
        }
        let mut last = f64::NEG_INFINITY;
        let mut best_round = (f64::NEG_INFINITY, p.clone());
        for _ in 0..MAX_ROUNDS {
            let st = reconstruct(config, &p).map_err(|e| InferenceError::Init(e.to_string()))?;
            match_returns(config, &mut p, &st, &target);
            let st = reconstruct(config, &p).map_err(|e| InferenceError::Init(e.to_string()))?;
            match_catches(config, obs, &mut p, &st);
            let ll = loglik(config, &idx, &p).map_or(f64::NEG_INFINITY, |x| x.1);
            log::trace!("matching round {ll:.2}");
            if ll > best_round.0 {
                best_round = (ll, p.clone());
            }
            if (0.0..ROUND_TOLERANCE).contains(&(ll - last)) {
                break;
            }
            last = ll;
        }
        p = best_round.1;
        for s in &layout.su {
            for i in s.homewater.clone().chain(s.init_smolts.clone()) {
                p.values[i] += 0.02 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if let Some((_, ll)) = loglik(config, &idx, &p) {
            log::debug!("initial log-likelihood {ll:.2}");
            if p.values.iter().all(|v| v.is_finite()) {
                return Ok(p);
            }
        }
        best = best.max(loglik(config, &idx, &p).map_or(f64::NEG_INFINITY, |(_, l)| l));
    }
    Err(InferenceError::Init(format!(
        "no finite log-likelihood after {ATTEMPTS} attempts (best {best})"
    )))
}

/// Harvest rates of a parameter set all lie in [0, 1].
pub fn rates_in_unit_interval(p: &ParameterSet) -> bool {
    p.layout
        .priors
        .iter()
        .zip(&p.values)
        .filter(|(k, _)| k.is_rate())
        .all(|(_, &v)| (0.0..=1.0).contains(&inv_logit(v)))
}
