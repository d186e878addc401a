use rand::Rng;

use super::state::{FisheryNode, LatentState, SuState};
use super::transitions::{
    allocate_smolts_into, apply_fishery, compute_eggs, compute_spawners, jitter,
    lognormal_sigma2, smolt_cohort, smolt_split_into, SpawnerInputs,
};
use super::LifecycleError;
use crate::domain::{inv_logit, logit, MigrationPath, ModelConfig, SeaAge};
use crate::params::{ParameterSet, Walk};

/// Upper bound on smolt ages accepted by configuration validation.
const MAX_AGES: usize = 6;

/// Fishery checkpoints of one unit's routes with the survival factor of the
/// natural-mortality period preceding each.
#[derive(Debug, Clone, PartialEq)]
pub struct SuPlan {
    pub maturing: Vec<(usize, f64)>,
    pub maturing_return: f64,
    /// Non-maturing checkpoints reached within the PFA year.
    pub first_year: Vec<(usize, f64)>,
    /// Checkpoints reached in the following year.
    pub second_year: Vec<(usize, f64)>,
    pub non_maturing_return: f64,
}

impl SuPlan {
    pub fn fisheries(&self) -> impl Iterator<Item = usize> + '_ {
        self.maturing
            .iter()
            .chain(&self.first_year)
            .chain(&self.second_year)
            .map(|(f, _)| *f)
    }
}

/// Route plans of every unit, precomputed once per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessPlan {
    pub su: Vec<SuPlan>,
    pub jitter_sigma2: f64,
    pub n_fisheries: usize,
}

fn resolve(config: &ModelConfig, path: &MigrationPath, m: f64) -> Vec<(usize, f64)> {
    path.steps
        .iter()
        .map(|s| {
            let f = config
                .fishery_index(&s.fishery)
                .expect("validated fishery reference");
            (f, (-m * s.delta_months_before).exp())
        })
        .collect()
}

impl ProcessPlan {
    pub fn new(config: &ModelConfig) -> Self {
        let su = (0..config.n_su())
            .map(|r| {
                let m = config.bio[r].natural_mortality;
                let routes = config
                    .routes_for(config.csg_of(r))
                    .expect("validated routes");
                let nm = &routes.non_maturing;
                let split = nm.year_split();
                let all = resolve(config, nm, m);
                SuPlan {
                    maturing: resolve(config, &routes.maturing, m),
                    maturing_return: (-m * routes.maturing.delta_to_return).exp(),
                    first_year: all[..split].to_vec(),
                    second_year: all[split..].to_vec(),
                    non_maturing_return: (-m * nm.delta_to_return).exp(),
                }
            })
            .collect();
        Self {
            su,
            jitter_sigma2: lognormal_sigma2(config.process_jitter_cv),
            n_fisheries: config.fisheries.len(),
        }
    }

    /// Empty state for unit `r` with nodes allocated.
    pub fn new_su_state(&self, config: &ModelConfig, r: usize) -> SuState {
        let t = config.n_years;
        let mut st = SuState::new(t, config.n_smolt_ages, self.n_fisheries);
        for f in self.su[r].fisheries() {
            st.node_of[f] = Some(st.nodes.len());
            st.nodes.push(FisheryNode {
                fishery: f,
                pre: vec![0.0; t],
                catch: vec![0.0; t],
                escapement: vec![0.0; t],
            });
        }
        st
    }

    pub fn new_state(&self, config: &ModelConfig) -> LatentState {
        LatentState {
            n_years: config.n_years,
            su: (0..config.n_su())
                .map(|r| self.new_su_state(config, r))
                .collect(),
        }
    }
}

#[inline]
fn run_fisheries(
    steps: &[(usize, f64)],
    mut n: f64,
    year: usize,
    r: usize,
    params: &ParameterSet,
    st: &mut SuState,
) -> f64 {
    for &(f, surv) in steps {
        n *= surv;
        let h = params.sea_rate(f, year, r);
        let (c, e) = apply_fishery(n, h);
        let node = &mut st.nodes[st.node_of[f].expect("node allocated")];
        node.pre[year] = n;
        node.catch[year] = c;
        node.escapement[year] = e;
        n = e;
    }
    n
}

/// Quantities that replace survival and homewater rates during
/// reconstruction. Survival in year `t` becomes `exp(log_pfa[t])` divided by
/// the smolts reaching the sea, and homewater rates with a finite
/// `log_hw_catch` become the rate that yields that catch.
#[derive(Debug, Clone, Copy)]
pub struct Anchors<'a> {
    /// Log of survival times migrating smolts, per year.
    pub log_pfa: Option<&'a [f64]>,
    /// Log homewater catch per year and sea age; NaN leaves the rate free.
    pub log_hw_catch: &'a [[f64; 2]],
}

/// Deterministic trajectory of unit `r` given every parameter, including
/// the process-noise innovations.
pub fn reconstruct_su(
    config: &ModelConfig,
    plan: &ProcessPlan,
    params: &ParameterSet,
    r: usize,
    st: &mut SuState,
) {
    reconstruct_su_anchored(config, plan, params, r, None, st)
}

/// [`reconstruct_su`] with survival and homewater rates derived from
/// `anchors`. Derived rates are written to `st.logit[0]` and `st.h_hw`;
/// `st.feasible` is cleared when one leaves the unit interval.
pub fn reconstruct_su_anchored(
    config: &ModelConfig,
    plan: &ProcessPlan,
    params: &ParameterSet,
    r: usize,
    anchors: Option<Anchors<'_>>,
    st: &mut SuState,
) {
    let lay = &params.layout.su[r];
    let v = &params.values;
    let t_max = config.n_years;
    let n_ages = config.n_smolt_ages;
    let bio = &config.bio[r];
    let sp = &plan.su[r];
    let js2 = plan.jitter_sigma2;
    let k = lay.support.len();

    let log_pfa = anchors.and_then(|a| a.log_pfa);
    if log_pfa.is_none() {
        params.logit_trajectory_into(Walk::Survival, r, &mut st.logit[0]);
    }
    params.logit_trajectory_into(Walk::Maturation, r, &mut st.logit[1]);
    st.feasible = true;

    st.migrating.iter_mut().for_each(|x| *x = 0.0);
    for (j, i) in lay.init_smolts.clone().enumerate() {
        st.migrating[j] += v[i].exp();
    }
    st.non_maturing_initial = v[lay.init_non_maturing].exp();

    let mut age_eps = [0.0; MAX_AGES];
    let age_eps = &mut age_eps[..n_ages];
    for t in 0..t_max {
        let theta3 = match log_pfa {
            Some(lp) => {
                let th = lp[t].exp() / st.migrating[t];
                if !(th > 0.0 && th < 1.0) {
                    st.feasible = false;
                }
                st.logit[0][t] = logit(th);
                th
            }
            None => inv_logit(st.logit[0][t]),
        };
        let theta4 = inv_logit(st.logit[1][t]);
        let pfa = jitter(theta3 * st.migrating[t], js2, v[lay.pfa_jitter.start + t]);
        let mat = jitter(theta4 * pfa, js2, v[lay.maturing_jitter.start + t]);
        let nm = jitter((1.0 - theta4) * pfa, js2, v[lay.non_maturing_jitter.start + t]);
        st.pfa[t] = pfa;
        st.maturing[t] = mat;
        st.non_maturing[t] = nm;

        let n = run_fisheries(&sp.maturing, mat, t, r, params, st);
        st.returns[0][t] = n * sp.maturing_return;

        let n = run_fisheries(&sp.first_year, nm, t, r, params, st);
        st.non_maturing_boundary[t] = n;

        let carried = if t == 0 {
            st.non_maturing_initial
        } else {
            st.non_maturing_boundary[t - 1]
        };
        let n = run_fisheries(&sp.second_year, carried, t, r, params, st);
        st.returns[1][t] = n * sp.non_maturing_return;

        for age in SeaAge::BOTH {
            let a = age.idx();
            let returns = st.returns[a][t];
            let p_del = config.delayed_spawning[a].get(t, r);
            let anchored = anchors.map_or(f64::NAN, |an| an.log_hw_catch[t][a]);
            let h_hw = if anchored.is_nan() {
                params.homewater_rate(r, t, age)
            } else {
                let h = anchored.exp() / ((1.0 - p_del) * returns);
                if !(h > 0.0 && h < 1.0) {
                    st.feasible = false;
                }
                h
            };
            st.h_hw[a][t] = h_hw;
            let mut x = SpawnerInputs {
                returns,
                h_hw,
                p_del,
                ..Default::default()
            };
            if t > 0 {
                x.returns_prev = st.returns[a][t - 1];
                x.h_hw_prev = st.h_hw[a][t - 1];
                x.p_del_prev = config.delayed_spawning[a].get(t - 1, r);
                x.h_del = params.delayed_rate(r, t, age);
            }
            if age == SeaAge::TwoSW {
                x.stocking = config.stocking_2sw.get(t, r);
            }
            st.homewater_catch[a][t] = h_hw * (1.0 - p_del) * returns;
            st.delayed_catch[a][t] =
                x.h_del * (1.0 - x.h_hw_prev) * x.p_del_prev * x.returns_prev;
            st.spawners[a][t] = compute_spawners(age, &x);
        }

        let eggs = compute_eggs(st.spawners[0][t], st.spawners[1][t], bio);
        st.eggs[t] = eggs;
        let n2 = smolt_cohort(eggs, bio, v[lay.egg_to_smolt.start + t]);
        st.smolts[t] = n2;

        let log_g: &[f64] = if k > 1 {
            &v[lay.smolt_split.start + t * k..lay.smolt_split.start + (t + 1) * k]
        } else {
            &[]
        };
        let cells = t * n_ages..(t + 1) * n_ages;
        smolt_split_into(&lay.support, log_g, &mut st.smolt_split[cells.clone()]);
        age_eps.iter_mut().for_each(|e| *e = 0.0);
        for (kk, &a) in lay.support.iter().enumerate() {
            age_eps[a] = v[lay.age_jitter.start + t * k + kk];
        }
        allocate_smolts_into(
            t as i64,
            n2,
            &st.smolt_split[cells.clone()],
            js2,
            &age_eps,
            &mut st.migrating,
            -1,
            &mut st.smolts_by_age[cells],
        );
    }
}

fn check_dims(config: &ModelConfig, params: &ParameterSet) -> Result<(), LifecycleError> {
    let lay = &params.layout;
    for (what, expected, got) in [
        ("stock units", config.n_su(), lay.n_su),
        ("years", config.n_years, lay.n_years),
        ("smolt ages", config.n_smolt_ages, lay.n_ages),
        ("fisheries", config.fisheries.len(), lay.fisheries.len()),
    ] {
        if expected != got {
            return Err(LifecycleError::Dimension {
                what,
                expected,
                got,
            });
        }
    }
    if lay.len() != params.values.len() {
        return Err(LifecycleError::Dimension {
            what: "parameter vector",
            expected: lay.len(),
            got: params.values.len(),
        });
    }
    Ok(())
}

/// Full lattice implied by `params`.
pub fn reconstruct(
    config: &ModelConfig,
    params: &ParameterSet,
) -> Result<LatentState, LifecycleError> {
    check_dims(config, params)?;
    let plan = ProcessPlan::new(config);
    let mut state = plan.new_state(config);
    for (r, st) in state.su.iter_mut().enumerate() {
        reconstruct_su(config, &plan, params, r, st);
    }
    Ok(state)
}

/// Forward simulation: fresh process noise from `rng`, structural
/// parameters taken from `params`.
pub fn simulate_forward<R: Rng + ?Sized>(
    config: &ModelConfig,
    params: &ParameterSet,
    rng: &mut R,
) -> Result<LatentState, LifecycleError> {
    check_dims(config, params)?;
    let mut p = params.clone();
    p.redraw_process_noise(rng);
    reconstruct(config, &p)
}
