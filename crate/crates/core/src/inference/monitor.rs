//! Scalars recorded at every stored draw.

use serde::{Deserialize, Serialize};

use crate::domain::{inv_logit, HarvestSlot, ModelConfig, SeaAge};
use crate::lifecycle::{correlation_from_covariance, LatentState};
use crate::params::{ParameterSet, Walk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorGroup {
    LogitTheta3,
    LogitTheta4,
    Theta3,
    Theta4,
    Sigma3,
    Sigma4,
    Rho3,
    Rho4,
    HarvestSea,
    HarvestHomewater,
    HarvestDelayed,
    Pfa,
    Spawners,
}

impl MonitorGroup {
    pub const ALL: [MonitorGroup; 13] = [
        MonitorGroup::LogitTheta3,
        MonitorGroup::LogitTheta4,
        MonitorGroup::Theta3,
        MonitorGroup::Theta4,
        MonitorGroup::Sigma3,
        MonitorGroup::Sigma4,
        MonitorGroup::Rho3,
        MonitorGroup::Rho4,
        MonitorGroup::HarvestSea,
        MonitorGroup::HarvestHomewater,
        MonitorGroup::HarvestDelayed,
        MonitorGroup::Pfa,
        MonitorGroup::Spawners,
    ];

    pub fn code(self) -> &'static str {
        match self {
            MonitorGroup::LogitTheta3 => "logit_theta3",
            MonitorGroup::LogitTheta4 => "logit_theta4",
            MonitorGroup::Theta3 => "theta3",
            MonitorGroup::Theta4 => "theta4",
            MonitorGroup::Sigma3 => "sigma3",
            MonitorGroup::Sigma4 => "sigma4",
            MonitorGroup::Rho3 => "rho3",
            MonitorGroup::Rho4 => "rho4",
            MonitorGroup::HarvestSea => "h",
            MonitorGroup::HarvestHomewater => "h_hw",
            MonitorGroup::HarvestDelayed => "h_del",
            MonitorGroup::Pfa => "pfa",
            MonitorGroup::Spawners => "spawners",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.code() == s.trim())
    }
}

/// Groups to record; empty means all.
pub fn resolve_groups(groups: &[MonitorGroup]) -> Vec<MonitorGroup> {
    if groups.is_empty() {
        MonitorGroup::ALL.to_vec()
    } else {
        MonitorGroup::ALL
            .into_iter()
            .filter(|g| groups.contains(g))
            .collect()
    }
}

fn slot_label(config: &ModelConfig, f: usize, k: usize) -> String {
    let spec = &config.fisheries[f];
    let members: Vec<&str> = spec
        .scope
        .iter()
        .filter(|&&r| spec.slot_of(r, config.labrador) == Some(HarvestSlot::Param(k)))
        .map(|&r| config.stock_units[r].label.as_str())
        .collect();
    if members.len() == 1 {
        members[0].to_string()
    } else {
        members.join("+")
    }
}

/// Names and values of the monitored scalars, in a fixed order. Names are
/// only produced when `names` is given.
pub fn record(
    config: &ModelConfig,
    params: &ParameterSet,
    state: &LatentState,
    groups: &[MonitorGroup],
    mut names: Option<&mut Vec<String>>,
    values: &mut Vec<f64>,
) {
    let n = config.n_su();
    let t_max = config.n_years;
    let su = |r: usize| config.stock_units[r].label.as_str();
    let mut push = |name: &dyn Fn() -> String, v: f64| {
        if let Some(ns) = names.as_deref_mut() {
            ns.push(name());
        }
        values.push(v);
    };
    for &g in groups {
        match g {
            MonitorGroup::LogitTheta3
            | MonitorGroup::LogitTheta4
            | MonitorGroup::Theta3
            | MonitorGroup::Theta4 => {
                let w = match g {
                    MonitorGroup::LogitTheta3 | MonitorGroup::Theta3 => 0,
                    _ => 1,
                };
                let natural = matches!(g, MonitorGroup::Theta3 | MonitorGroup::Theta4);
                for r in 0..n {
                    for t in 0..t_max {
                        let l = state.su[r].logit[w][t];
                        push(
                            &|| format!("{}[{},{}]", g.code(), su(r), config.year_label(t)),
                            if natural { inv_logit(l) } else { l },
                        );
                    }
                }
            }
            MonitorGroup::Sigma3 | MonitorGroup::Sigma4 | MonitorGroup::Rho3 | MonitorGroup::Rho4 => {
                let w = match g {
                    MonitorGroup::Sigma3 | MonitorGroup::Rho3 => Walk::Survival,
                    _ => Walk::Maturation,
                };
                let cov = params.walk(w).covariance();
                let is_rho = matches!(g, MonitorGroup::Rho3 | MonitorGroup::Rho4);
                let m = if is_rho {
                    correlation_from_covariance(cov).unwrap_or_else(|_| cov.map(|_| f64::NAN))
                } else {
                    cov.clone()
                };
                for i in 0..n {
                    let from = if is_rho { i + 1 } else { i };
                    for j in from..n {
                        push(&|| format!("{}[{},{}]", g.code(), su(i), su(j)), m[(i, j)]);
                    }
                }
            }
            MonitorGroup::HarvestSea => {
                for (f, fl) in params.layout.fisheries.iter().enumerate() {
                    let id = &config.fisheries[f].id;
                    for t in 0..t_max {
                        for k in 0..fl.n_slots {
                            let v = inv_logit(params.values[params.layout.sea_index(f, t, k)]);
                            push(
                                &|| format!("h[{id},{},{}]", config.year_label(t), slot_label(config, f, k)),
                                v,
                            );
                        }
                    }
                }
            }
            MonitorGroup::HarvestHomewater => {
                for r in 0..n {
                    for t in 0..t_max {
                        for age in SeaAge::BOTH {
                            push(
                                &|| format!("h_hw[{},{},{}]", su(r), config.year_label(t), age),
                                params.homewater_rate(r, t, age),
                            );
                        }
                    }
                }
            }
            MonitorGroup::HarvestDelayed => {
                for r in 0..n {
                    for t in 0..t_max {
                        for age in SeaAge::BOTH {
                            if params.layout.su[r].delayed[t][age.idx()].is_some() {
                                push(
                                    &|| format!("h_del[{},{},{}]", su(r), config.year_label(t), age),
                                    params.delayed_rate(r, t, age),
                                );
                            }
                        }
                    }
                }
            }
            MonitorGroup::Pfa => {
                for r in 0..n {
                    for t in 0..t_max {
                        push(
                            &|| format!("pfa[{},{}]", su(r), config.year_label(t)),
                            state.su[r].pfa[t],
                        );
                    }
                }
            }
            MonitorGroup::Spawners => {
                for age in SeaAge::BOTH {
                    for r in 0..n {
                        for t in 0..t_max {
                            push(
                                &|| format!("spawners_{}[{},{}]", age.code().to_lowercase(), su(r), config.year_label(t)),
                                state.su[r].spawners[age.idx()][t],
                            );
                        }
                    }
                }
            }
        }
    }
}

/// Names of the monitored scalars.
pub fn names(config: &ModelConfig, params: &ParameterSet, state: &LatentState, groups: &[MonitorGroup]) -> Vec<String> {
    let mut n = Vec::new();
    let mut v = Vec::new();
    record(config, params, state, groups, Some(&mut n), &mut v);
    n
}
