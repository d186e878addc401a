use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::scenario::RECENT_YEARS;
use super::ForecastError;
use crate::domain::{ModelConfig, SeaAge};
use crate::lifecycle::LatentState;
use crate::params::{ParameterSet, Walk};

/// State of one stock unit at the end of the fitted period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuBoundary {
    /// Last-year logits of post-smolt survival and maturation.
    pub logit: [f64; 2],
    /// Non-maturing fish from the last PFA year, due back as 2SW.
    pub non_maturing: f64,
    /// Smolts already committed to migration years T-1 ..= T + n_ages.
    pub migrating: Vec<f64>,
    /// Fish of the last return year that delayed spawning, by sea age.
    pub delayed_carry: [f64; 2],
    /// Last delayed-spawner harvest rate, by sea age.
    pub h_delayed: [f64; 2],
    /// Recent mean homewater catch in numbers, by sea age.
    pub homewater_catch: [f64; 2],
}

/// Everything a posterior draw contributes to a forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub su: Vec<SuBoundary>,
    /// Random-walk covariances of survival and maturation.
    pub sigma: [DMatrix<f64>; 2],
}

impl Boundary {
    /// Scalars per draw for `n_su` units and `n_ages` smolt ages.
    pub fn flat_len(n_su: usize, n_ages: usize) -> usize {
        n_su * (n_ages + 11) + 2 * n_su * n_su
    }

    pub fn from_state(
        config: &ModelConfig,
        params: &ParameterSet,
        state: &LatentState,
    ) -> Self {
        let t = config.n_years;
        let last = t - 1;
        let a = config.n_smolt_ages;
        let from = t.saturating_sub(RECENT_YEARS);
        let su = state
            .su
            .iter()
            .enumerate()
            .map(|(r, s)| {
                let carry = |age: SeaAge| {
                    let i = age.idx();
                    (1.0 - params.homewater_rate(r, last, age))
                        * config.delayed_spawning[i].get(last, r)
                        * s.returns[i][last]
                };
                let hw = |age: SeaAge| {
                    let c = &s.homewater_catch[age.idx()][from..];
                    c.iter().sum::<f64>() / c.len() as f64
                };
                SuBoundary {
                    logit: [s.logit[0][last], s.logit[1][last]],
                    non_maturing: s.non_maturing_boundary[last],
                    migrating: s.migrating[t..t + a + 2].to_vec(),
                    delayed_carry: [carry(SeaAge::OneSW), carry(SeaAge::TwoSW)],
                    h_delayed: [
                        params.delayed_rate(r, last, SeaAge::OneSW),
                        params.delayed_rate(r, last, SeaAge::TwoSW),
                    ],
                    homewater_catch: [hw(SeaAge::OneSW), hw(SeaAge::TwoSW)],
                }
            })
            .collect();
        Self {
            su,
            sigma: [
                params.walk(Walk::Survival).covariance().clone(),
                params.walk(Walk::Maturation).covariance().clone(),
            ],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for s in &self.su {
            v.extend_from_slice(&s.logit);
            v.push(s.non_maturing);
            v.extend_from_slice(&s.migrating);
            v.extend_from_slice(&s.delayed_carry);
            v.extend_from_slice(&s.h_delayed);
            v.extend_from_slice(&s.homewater_catch);
        }
        for m in &self.sigma {
            v.extend(m.iter());
        }
        v
    }

    pub fn from_flat(v: &[f64], n_su: usize, n_ages: usize) -> Result<Self, ForecastError> {
        let expected = Self::flat_len(n_su, n_ages);
        if v.len() != expected {
            return Err(ForecastError::BoundaryLength {
                expected,
                got: v.len(),
            });
        }
        let mut it = v.iter().copied();
        let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
        let mut su = Vec::with_capacity(n_su);
        for _ in 0..n_su {
            let l = take(3);
            let migrating = take(n_ages + 2);
            let rest = take(6);
            su.push(SuBoundary {
                logit: [l[0], l[1]],
                non_maturing: l[2],
                migrating,
                delayed_carry: [rest[0], rest[1]],
                h_delayed: [rest[2], rest[3]],
                homewater_catch: [rest[4], rest[5]],
            });
        }
        let s0 = DMatrix::from_column_slice(n_su, n_su, &take(n_su * n_su));
        let s1 = DMatrix::from_column_slice(n_su, n_su, &take(n_su * n_su));
        Ok(Self { su, sigma: [s0, s1] })
    }

    /// Checks that every unit carries the cohorts the forecast needs.
    pub fn validate(&self, config: &ModelConfig) -> Result<(), ForecastError> {
        let n = config.n_su();
        let a = config.n_smolt_ages;
        if self.su.len() != n || self.sigma.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(ForecastError::BoundaryShape { n_su: n });
        }
        let mut missing = Vec::new();
        for (r, s) in self.su.iter().enumerate() {
            let label = &config.stock_units[r].label;
            if s.migrating.len() != a + 2 {
                missing.push(format!(
                    "{label}: {} of {} migration years",
                    s.migrating.len(),
                    a + 2
                ));
                continue;
            }
            for (j, m) in s.migrating.iter().enumerate() {
                if !(m.is_finite() && *m >= 0.0) {
                    missing.push(format!(
                        "{label}: smolts migrating in {}",
                        config.year_label(config.n_years - 1 + j)
                    ));
                }
            }
            let scalars = s
                .logit
                .iter()
                .chain([&s.non_maturing])
                .chain(&s.delayed_carry)
                .chain(&s.h_delayed)
                .chain(&s.homewater_catch);
            if scalars.clone().any(|x| !x.is_finite()) {
                missing.push(format!("{label}: non-finite boundary scalars"));
            }
        }
        if !missing.is_empty() {
            return Err(ForecastError::IncompleteBoundary(missing));
        }
        Ok(())
    }
}
