use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::boundary::Boundary;
use super::scenario::{fishery_targets, CatchScenario, FrozenInputs};
use super::ForecastError;
use crate::domain::{inv_logit, ModelConfig, SeaAge};
use crate::lifecycle::transitions::{
    allocate_and_sum_smolts, compute_eggs, covariance_factor, draw_log_gamma, jitter,
    smolt_cohort, smolt_split_from_log_gammas,
};
use crate::lifecycle::ProcessPlan;

/// Innovations of one forecast draw, generated in a fixed order so that
/// every scenario sees the same stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastNoise {
    pub horizon: usize,
    /// Random-walk innovations, horizon x units, year-major.
    pub walk: [Vec<f64>; 2],
    pub pfa: Vec<f64>,
    pub maturing: Vec<f64>,
    pub non_maturing: Vec<f64>,
    pub smolts: Vec<f64>,
    /// Log-gamma auxiliaries per unit, horizon x support.
    pub log_gamma: Vec<Vec<f64>>,
    /// Smolt-age jitter per unit, horizon x support.
    pub age: Vec<Vec<f64>>,
}

impl ForecastNoise {
    pub fn draw<R: Rng + ?Sized>(config: &ModelConfig, horizon: usize, rng: &mut R) -> Self {
        let n = config.n_su();
        let mut normals = |k: usize| -> Vec<f64> {
            (0..k).map(|_| rng.sample(StandardNormal)).collect()
        };
        let walk = [normals(horizon * n), normals(horizon * n)];
        let pfa = normals(horizon * n);
        let maturing = normals(horizon * n);
        let non_maturing = normals(horizon * n);
        let smolts = normals(horizon * n);
        let mut log_gamma = Vec::with_capacity(n);
        let mut age = Vec::with_capacity(n);
        for bio in &config.bio {
            let support = bio.age_support();
            let k = support.len();
            let mut lg = Vec::new();
            if k > 1 {
                for _ in 0..horizon {
                    for &a in &support {
                        lg.push(draw_log_gamma(bio.eta_sample * bio.psm[a], rng));
                    }
                }
            }
            log_gamma.push(lg);
            age.push((0..horizon * k).map(|_| rng.sample(StandardNormal)).collect());
        }
        Self {
            horizon,
            walk,
            pfa,
            maturing,
            non_maturing,
            smolts,
            log_gamma,
            age,
        }
    }
}

/// Forecast of one posterior draw under one scenario. Year-indexed
/// vectors are horizon x units, year-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrajectory {
    pub horizon: usize,
    pub n_su: usize,
    pub logit: [Vec<f64>; 2],
    pub pfa: Vec<f64>,
    pub returns: [Vec<f64>; 2],
    pub spawners: [Vec<f64>; 2],
    /// Eggs potentially deposited by returning fish.
    pub eggs_returns: Vec<f64>,
    /// Eggs deposited by spawners.
    pub eggs_spawners: Vec<f64>,
    /// Realized catch in numbers, horizon x fisheries.
    pub catch: Vec<f64>,
    /// Requested catch in numbers per fishery.
    pub target: Vec<f64>,
}

impl ForecastTrajectory {
    #[inline]
    pub fn at(&self, v: &[f64], k: usize, r: usize) -> f64 {
        v[k * self.n_su + r]
    }
}

/// Precomputed pieces shared by every draw of a forecast.
#[derive(Debug, Clone)]
pub struct ForecastContext {
    pub plan: ProcessPlan,
    pub frozen: FrozenInputs,
    /// Fisheries under a quota, which take fixed numbers.
    pub quota: Vec<bool>,
}

impl ForecastContext {
    pub fn new(config: &ModelConfig, frozen: FrozenInputs) -> Self {
        Self {
            plan: ProcessPlan::new(config),
            frozen,
            quota: config
                .fisheries
                .iter()
                .map(|f| f.quota_group.is_some())
                .collect(),
        }
    }
}

struct Removal<'a> {
    ctx: &'a ForecastContext,
    targets: &'a [f64],
    catch: &'a mut [f64],
}

impl Removal<'_> {
    fn run(&mut self, steps: &[(usize, f64)], mut n: f64, r: usize) -> f64 {
        for &(f, surv) in steps {
            n *= surv;
            if self.ctx.quota[f] {
                let c = (self.targets[f] * self.ctx.frozen.allocation[f][r]).min(n);
                n -= c;
                self.catch[f] += c;
            }
        }
        n
    }
}

/// Deterministic projection of `boundary` given its innovations.
pub fn project(
    config: &ModelConfig,
    ctx: &ForecastContext,
    targets: &[f64],
    boundary: &Boundary,
    noise: &ForecastNoise,
) -> Result<ForecastTrajectory, ForecastError> {
    let n = config.n_su();
    let h = noise.horizon;
    let a_max = config.n_smolt_ages;
    let last = config.n_years - 1;
    let n_f = config.fisheries.len();
    let js2 = ctx.plan.jitter_sigma2;
    let factors = [
        covariance_factor(&boundary.sigma[0])?,
        covariance_factor(&boundary.sigma[1])?,
    ];
    let grid = || vec![0.0; h * n];
    let mut out = ForecastTrajectory {
        horizon: h,
        n_su: n,
        logit: [grid(), grid()],
        pfa: grid(),
        returns: [grid(), grid()],
        spawners: [grid(), grid()],
        eggs_returns: grid(),
        eggs_spawners: grid(),
        catch: vec![0.0; h * n_f],
        target: targets.to_vec(),
    };

    for w in 0..2 {
        let l: &DMatrix<f64> = &factors[w];
        let mut prev: Vec<f64> = boundary.su.iter().map(|s| s.logit[w]).collect();
        for k in 0..h {
            let z = &noise.walk[w][k * n..(k + 1) * n];
            for r in 0..n {
                let d: f64 = (0..=r).map(|j| l[(r, j)] * z[j]).sum();
                prev[r] += d;
                out.logit[w][k * n + r] = prev[r];
            }
        }
    }

    for r in 0..n {
        let b = &boundary.su[r];
        let bio = &config.bio[r];
        let sp = &ctx.plan.su[r];
        let support = bio.age_support();
        let kk = support.len();
        // migrating smolts for years T-1 ..= T + h + n_ages
        let mut mig = vec![0.0; h + a_max + 2];
        mig[..b.migrating.len()].copy_from_slice(&b.migrating);
        let mut carried = b.non_maturing;
        let mut delayed = b.delayed_carry;
        let p_del = [
            config.delayed_spawning[0].get(last, r),
            config.delayed_spawning[1].get(last, r),
        ];
        let stocking = config.stocking_2sw.get(last, r);
        let mut age_eps = vec![0.0; a_max];
        for k in 0..h {
            let i = k * n + r;
            let mut removal = Removal {
                ctx,
                targets,
                catch: &mut out.catch[k * n_f..(k + 1) * n_f],
            };
            let theta3 = inv_logit(out.logit[0][i]);
            let theta4 = inv_logit(out.logit[1][i]);
            let pfa = jitter(theta3 * mig[k], js2, noise.pfa[i]);
            let mat = jitter(theta4 * pfa, js2, noise.maturing[i]);
            let nm = jitter((1.0 - theta4) * pfa, js2, noise.non_maturing[i]);
            out.pfa[i] = pfa;

            let r1 = removal.run(&sp.maturing, mat, r) * sp.maturing_return;
            let boundary_nm = removal.run(&sp.first_year, nm, r);
            let r2 = removal.run(&sp.second_year, carried, r) * sp.non_maturing_return;
            carried = boundary_nm;
            out.returns[0][i] = r1;
            out.returns[1][i] = r2;

            let mut spawners = [0.0; 2];
            for age in SeaAge::BOTH {
                let a = age.idx();
                let ret = [r1, r2][a];
                let available = (1.0 - p_del[a]) * ret;
                let c = b.homewater_catch[a].min(available);
                let h_eff = if available > 0.0 { c / available } else { 0.0 };
                let mut s = available - c + delayed[a] * (1.0 - b.h_delayed[a]);
                if age == SeaAge::TwoSW {
                    s += stocking;
                }
                delayed[a] = (1.0 - h_eff) * p_del[a] * ret;
                spawners[a] = s;
                out.spawners[a][i] = s;
            }
            out.eggs_returns[i] = compute_eggs(r1, r2, bio);
            let eggs = compute_eggs(spawners[0], spawners[1], bio);
            out.eggs_spawners[i] = eggs;

            let n2 = smolt_cohort(eggs, bio, noise.smolts[i]);
            let lg = if kk > 1 {
                &noise.log_gamma[r][k * kk..(k + 1) * kk]
            } else {
                &[][..]
            };
            let split = smolt_split_from_log_gammas(a_max, &support, lg);
            age_eps.iter_mut().for_each(|e| *e = 0.0);
            for (j, &age) in support.iter().enumerate() {
                age_eps[age] = noise.age[r][k * kk + j];
            }
            let cohort = (last + 1 + k) as i64;
            allocate_and_sum_smolts(cohort, n2, &split, js2, &age_eps, &mut mig, last as i64);
        }
    }
    Ok(out)
}

/// Forecast of one posterior draw with fresh innovations from `rng`.
pub fn forecast_trajectory<R: Rng + ?Sized>(
    boundary: &Boundary,
    scenario: &CatchScenario,
    config: &ModelConfig,
    frozen: &FrozenInputs,
    rng: &mut R,
) -> Result<ForecastTrajectory, ForecastError> {
    scenario.validate()?;
    boundary.validate(config)?;
    let ctx = ForecastContext::new(config, frozen.clone());
    let targets = fishery_targets(config, frozen, scenario)?;
    let noise = ForecastNoise::draw(config, scenario.horizon_years, rng);
    project(config, &ctx, &targets, boundary, &noise)
}
