//! Free parameters of the model on an unconstrained scale.
//!
//! Every scalar lives in one flat vector described by a [`Layout`]; the two
//! precision matrices of the random walks are held alongside with cached
//! covariance factors. Random walks are non-centred: the stored quantities
//! are the first-year logits and standard-normal innovations `z`, with
//! increments `Δ_t = L z_t` where `L L' = Σ`.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::domain::{inv_logit, HarvestSlot, ModelConfig, SeaAge};
use crate::lifecycle::transitions::{draw_log_gamma, lognormal_sigma2};

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("precision matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("precision matrix must be {0}x{0}")]
    MatrixShape(usize),
}

/// Prior of one unconstrained scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PriorKind {
    StdNormal,
    Normal { mean: f64, sd: f64 },
    /// Logit of a Beta(1,2) rate, Jacobian included.
    LogitBeta12,
    /// Log of a Gamma(shape, 1) variable, Jacobian included.
    LogGamma { shape: f64 },
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl PriorKind {
    /// Log density up to an additive constant shared by all values.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            PriorKind::StdNormal => -0.5 * x * x,
            PriorKind::Normal { mean, sd } => {
                let d = (x - mean) / sd;
                -0.5 * d * d - sd.ln()
            }
            PriorKind::LogitBeta12 => {
                // ln 2 + ln h + 2 ln(1-h) with h = inv_logit(x)
                std::f64::consts::LN_2 - softplus(-x) - 2.0 * softplus(x)
            }
            PriorKind::LogGamma { shape } => shape * x - x.exp() - ln_gamma(shape),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PriorKind::StdNormal => rng.sample(StandardNormal),
            PriorKind::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            PriorKind::LogitBeta12 => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                let h = 1.0 - u.sqrt();
                let h = h.clamp(1e-12, 1.0 - 1e-12);
                (h / (1.0 - h)).ln()
            }
            PriorKind::LogGamma { shape } => draw_log_gamma(shape, rng),
        }
    }

    /// Whether this scalar is a structural parameter rather than process
    /// noise redrawn by forward simulation.
    pub fn is_rate(&self) -> bool {
        matches!(self, PriorKind::LogitBeta12)
    }
}

/// Which random walk a matrix or trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Walk {
    /// Post-smolt survival.
    Survival,
    /// Probability of maturing as 1SW.
    Maturation,
}

impl Walk {
    pub const BOTH: [Walk; 2] = [Walk::Survival, Walk::Maturation];

    pub fn idx(self) -> usize {
        match self {
            Walk::Survival => 0,
            Walk::Maturation => 1,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Walk::Survival => "theta3",
            Walk::Maturation => "theta4",
        }
    }
}

/// Index map of one stock unit's scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuLayout {
    pub first: [usize; 2],
    /// Random-walk innovations for years 1..T.
    pub z: [Range<usize>; 2],
    /// Egg-to-smolt innovations per cohort.
    pub egg_to_smolt: Range<usize>,
    /// Positive-psm ages (0-based).
    pub support: Vec<usize>,
    /// Log-gamma auxiliaries, `support.len()` per cohort; empty when the
    /// support is a single age.
    pub smolt_split: Range<usize>,
    /// Jitter on smolts by age, `support.len()` per cohort.
    pub age_jitter: Range<usize>,
    pub pfa_jitter: Range<usize>,
    pub maturing_jitter: Range<usize>,
    pub non_maturing_jitter: Range<usize>,
    /// Log smolts migrating in years -1.. before in-model cohorts contribute.
    pub init_smolts: Range<usize>,
    /// Log non-maturing abundance heading for 2SW returns in year 0.
    pub init_non_maturing: usize,
    /// Homewater harvest logits, two per year (1SW then 2SW).
    pub homewater: Range<usize>,
    /// Delayed-spawner harvest logits by year and sea age, present only
    /// where fish delayed spawning the year before.
    pub delayed: Vec<[Option<usize>; 2]>,
}

/// Index map of one mixed-stock fishery's harvest logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisheryLayout {
    pub range: Range<usize>,
    pub n_slots: usize,
    /// Slot per stock unit, `None` outside the scope.
    pub slot_of: Vec<Option<HarvestSlot>>,
}

/// Shape of a [`ParameterSet`] for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub n_su: usize,
    pub n_years: usize,
    pub n_ages: usize,
    pub n_init_smolts: usize,
    pub su: Vec<SuLayout>,
    pub fisheries: Vec<FisheryLayout>,
    pub priors: Vec<PriorKind>,
    pub names: Vec<String>,
}

struct Builder {
    priors: Vec<PriorKind>,
    names: Vec<String>,
}

impl Builder {
    fn push(&mut self, prior: PriorKind, name: String) -> usize {
        self.priors.push(prior);
        self.names.push(name);
        self.priors.len() - 1
    }

    fn run(&mut self, n: usize, prior: PriorKind, name: impl Fn(usize) -> String) -> Range<usize> {
        let start = self.priors.len();
        for i in 0..n {
            self.push(prior, name(i));
        }
        start..self.priors.len()
    }
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let t = config.n_years;
        let n = config.n_su();
        let mut b = Builder {
            priors: Vec::new(),
            names: Vec::new(),
        };
        let n_init = config.n_initial_smolt_years();
        let mut su = Vec::with_capacity(n);
        for r in 0..n {
            let label = &config.stock_units[r].label;
            let bio = &config.bio[r];
            let support = bio.age_support();
            let k = support.len();
            let first = [
                b.push(PriorKind::StdNormal, format!("logit_theta3_first[{label}]")),
                b.push(PriorKind::StdNormal, format!("logit_theta4_first[{label}]")),
            ];
            let z = [
                b.run(t - 1, PriorKind::StdNormal, |i| format!("z3[{label},{}]", i + 1)),
                b.run(t - 1, PriorKind::StdNormal, |i| format!("z4[{label},{}]", i + 1)),
            ];
            let egg_to_smolt = b.run(t, PriorKind::StdNormal, |c| format!("eps_smolt[{label},{c}]"));
            let smolt_split = if k > 1 {
                let start = b.priors.len();
                for c in 0..t {
                    for &a in &support {
                        b.push(
                            PriorKind::LogGamma {
                                shape: bio.eta_sample * bio.psm[a],
                            },
                            format!("log_gamma_psm[{label},{c},{}]", a + 1),
                        );
                    }
                }
                start..b.priors.len()
            } else {
                b.priors.len()..b.priors.len()
            };
            let age_jitter = b.run(t * k, PriorKind::StdNormal, |i| {
                format!("eps_age[{label},{},{}]", i / k, support[i % k] + 1)
            });
            let pfa_jitter = b.run(t, PriorKind::StdNormal, |i| format!("eps_pfa[{label},{i}]"));
            let maturing_jitter =
                b.run(t, PriorKind::StdNormal, |i| format!("eps_mat[{label},{i}]"));
            let non_maturing_jitter =
                b.run(t, PriorKind::StdNormal, |i| format!("eps_nm[{label},{i}]"));
            let g = &config.initial_guess;
            let sd = lognormal_sigma2(g.cv).sqrt();
            let init_smolts = b.run(
                n_init,
                PriorKind::Normal {
                    mean: g.smolts[r].ln(),
                    sd,
                },
                |j| format!("log_init_smolts[{label},{}]", j as i64 - 1),
            );
            let init_non_maturing = b.push(
                PriorKind::Normal {
                    mean: g.non_maturing[r].ln(),
                    sd,
                },
                format!("log_init_nm[{label}]"),
            );
            let homewater = b.run(2 * t, PriorKind::LogitBeta12, |i| {
                format!("logit_h_hw[{label},{},{}]", i / 2, SeaAge::BOTH[i % 2])
            });
            let mut delayed = vec![[None, None]; t];
            for (y, cell) in delayed.iter_mut().enumerate().skip(1) {
                for age in SeaAge::BOTH {
                    if config.delayed_spawning[age.idx()].get(y - 1, r) > 0.0 {
                        cell[age.idx()] = Some(b.push(
                            PriorKind::LogitBeta12,
                            format!("logit_h_del[{label},{y},{age}]"),
                        ));
                    }
                }
            }
            su.push(SuLayout {
                first,
                z,
                egg_to_smolt,
                support,
                smolt_split,
                age_jitter,
                pfa_jitter,
                maturing_jitter,
                non_maturing_jitter,
                init_smolts,
                init_non_maturing,
                homewater,
                delayed,
            });
        }
        let fisheries = config
            .fisheries
            .iter()
            .map(|f| {
                let n_slots = f.n_slots(config.labrador);
                let range = b.run(t * n_slots, PriorKind::LogitBeta12, |i| {
                    format!("logit_h[{},{},{}]", f.id, i / n_slots, i % n_slots)
                });
                FisheryLayout {
                    range,
                    n_slots,
                    slot_of: (0..n).map(|r| f.slot_of(r, config.labrador)).collect(),
                }
            })
            .collect();
        Layout {
            n_su: n,
            n_years: t,
            n_ages: config.n_smolt_ages,
            n_init_smolts: n_init,
            su,
            fisheries,
            priors: b.priors,
            names: b.names,
        }
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn z_index(&self, walk: Walk, r: usize, year: usize) -> usize {
        self.su[r].z[walk.idx()].start + year - 1
    }

    pub fn homewater_index(&self, r: usize, year: usize, age: SeaAge) -> usize {
        self.su[r].homewater.start + 2 * year + age.idx()
    }

    pub fn sea_index(&self, f: usize, year: usize, slot: usize) -> usize {
        let fl = &self.fisheries[f];
        fl.range.start + year * fl.n_slots + slot
    }

    /// Indices of quantities that the forward simulator redraws.
    pub fn process_noise(&self) -> Vec<usize> {
        self.su
            .iter()
            .flat_map(|s| {
                s.egg_to_smolt
                    .clone()
                    .chain(s.smolt_split.clone())
                    .chain(s.age_jitter.clone())
                    .chain(s.pfa_jitter.clone())
                    .chain(s.maturing_jitter.clone())
                    .chain(s.non_maturing_jitter.clone())
            })
            .collect()
    }
}

/// Random-walk precision with its cached covariance factor.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkMatrix {
    precision: DMatrix<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl WalkMatrix {
    pub fn from_precision(precision: DMatrix<f64>) -> Result<Self, ParamError> {
        let n = precision.nrows();
        if precision.ncols() != n {
            return Err(ParamError::MatrixShape(n));
        }
        let sym = (&precision + precision.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone()).ok_or(ParamError::NotPositiveDefinite)?;
        let covariance = chol.inverse();
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        let factor = Cholesky::new(covariance.clone())
            .ok_or(ParamError::NotPositiveDefinite)?
            .l();
        Ok(Self {
            precision: sym,
            covariance,
            factor,
        })
    }

    pub fn from_covariance(covariance: DMatrix<f64>) -> Result<Self, ParamError> {
        let chol = Cholesky::new(covariance.clone()).ok_or(ParamError::NotPositiveDefinite)?;
        Self::from_precision(chol.inverse())
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor of the covariance.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

/// A point in parameter space.
#[derive(Debug, Clone)]
pub struct ParameterSet {
    pub layout: Arc<Layout>,
    pub values: Vec<f64>,
    pub walks: [WalkMatrix; 2],
}

impl ParameterSet {
    /// Zero innovations, prior medians for initial conditions, Beta(1,2)
    /// mean harvest rates and identity covariances.
    pub fn skeleton(layout: Arc<Layout>) -> Self {
        let values = layout
            .priors
            .iter()
            .map(|p| match *p {
                PriorKind::StdNormal => 0.0,
                PriorKind::Normal { mean, .. } => mean,
                PriorKind::LogitBeta12 => -(2.0f64.ln()),
                PriorKind::LogGamma { shape } => shape.ln(),
            })
            .collect();
        let n = layout.n_su;
        let id = WalkMatrix::from_precision(DMatrix::identity(n, n)).expect("identity");
        Self {
            layout,
            values,
            walks: [id.clone(), id],
        }
    }

    /// Every scalar and both precision matrices drawn from their priors.
    pub fn sample_prior<R: Rng + ?Sized>(layout: Arc<Layout>, dof: f64, rng: &mut R) -> Self {
        let values = layout.priors.iter().map(|p| p.sample(rng)).collect();
        let n = layout.n_su;
        let scale = DMatrix::identity(n, n);
        let walks = [(); 2].map(|_| {
            let w = crate::inference::wishart::sample_wishart(&scale, dof, rng)
                .expect("identity scale");
            WalkMatrix::from_precision(w).unwrap_or_else(|_| {
                WalkMatrix::from_precision(DMatrix::identity(n, n)).expect("identity")
            })
        });
        Self {
            layout,
            values,
            walks,
        }
    }

    /// Redraw process noise from its prior, keeping structural parameters.
    pub fn redraw_process_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for i in self.layout.process_noise() {
            self.values[i] = self.layout.priors[i].sample(rng);
        }
    }

    pub fn walk(&self, w: Walk) -> &WalkMatrix {
        &self.walks[w.idx()]
    }

    pub fn set_precision(&mut self, w: Walk, precision: DMatrix<f64>) -> Result<(), ParamError> {
        self.walks[w.idx()] = WalkMatrix::from_precision(precision)?;
        Ok(())
    }

    /// Random-walk increments `Δ` as a (T-1) x N matrix.
    pub fn increments(&self, w: Walk) -> DMatrix<f64> {
        let l = self.walks[w.idx()].factor();
        let n = self.layout.n_su;
        let t = self.layout.n_years;
        let mut out = DMatrix::zeros(t - 1, n);
        for y in 1..t {
            for r in 0..n {
                let mut d = 0.0;
                for j in 0..=r {
                    d += l[(r, j)] * self.values[self.layout.z_index(w, j, y)];
                }
                out[(y - 1, r)] = d;
            }
        }
        out
    }

    /// Replace the precision while keeping the increments `Δ` fixed, by
    /// solving for new innovations.
    pub fn set_precision_keep_increments(
        &mut self,
        w: Walk,
        precision: DMatrix<f64>,
    ) -> Result<(), ParamError> {
        let delta = self.increments(w);
        let m = WalkMatrix::from_precision(precision)?;
        let l = m.factor().clone();
        let n = self.layout.n_su;
        for y in 1..delta.nrows() + 1 {
            // forward substitution L z = Δ
            let mut z = vec![0.0; n];
            for r in 0..n {
                let mut s = delta[(y - 1, r)];
                for (j, zj) in z.iter().enumerate().take(r) {
                    s -= l[(r, j)] * zj;
                }
                z[r] = s / l[(r, r)];
            }
            for (r, zr) in z.into_iter().enumerate() {
                let i = self.layout.z_index(w, r, y);
                self.values[i] = zr;
            }
        }
        self.walks[w.idx()] = m;
        Ok(())
    }

    /// Logit trajectory of stock unit `r`, years 0..T.
    pub fn logit_trajectory(&self, w: Walk, r: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout.n_years);
        self.logit_trajectory_into(w, r, &mut out);
        out
    }

    pub fn logit_trajectory_into(&self, w: Walk, r: usize, out: &mut Vec<f64>) {
        let l = self.walks[w.idx()].factor();
        let lay = &self.layout;
        out.clear();
        let mut x = self.values[lay.su[r].first[w.idx()]];
        out.push(x);
        for y in 1..lay.n_years {
            let mut d = 0.0;
            for j in 0..=r {
                d += l[(r, j)] * self.values[lay.z_index(w, j, y)];
            }
            x += d;
            out.push(x);
        }
    }

    pub fn homewater_rate(&self, r: usize, year: usize, age: SeaAge) -> f64 {
        inv_logit(self.values[self.layout.homewater_index(r, year, age)])
    }

    pub fn delayed_rate(&self, r: usize, year: usize, age: SeaAge) -> f64 {
        match self.layout.su[r].delayed[year][age.idx()] {
            Some(i) => inv_logit(self.values[i]),
            None => 0.0,
        }
    }

    /// Harvest rate of fishery `f` on unit `r` in `year`; zero outside the
    /// scope or where structurally fixed.
    pub fn sea_rate(&self, f: usize, year: usize, r: usize) -> f64 {
        match self.layout.fisheries[f].slot_of[r] {
            Some(HarvestSlot::Param(k)) => inv_logit(self.values[self.layout.sea_index(f, year, k)]),
            Some(HarvestSlot::Zero) | None => 0.0,
        }
    }

    /// Sum of scalar log prior densities, `indices` only when given.
    pub fn log_prior_of(&self, indices: &[usize]) -> f64 {
        indices
            .iter()
            .map(|&i| self.layout.priors[i].log_density(self.values[i]))
            .sum()
    }

    pub fn log_prior(&self) -> f64 {
        self.layout
            .priors
            .iter()
            .zip(&self.values)
            .map(|(p, &x)| p.log_density(x))
            .sum()
    }

    pub fn set_values(&mut self, values: Vec<f64>) -> Result<(), ParamError> {
        if values.len() != self.layout.len() {
            return Err(ParamError::Length {
                expected: self.layout.len(),
                got: values.len(),
            });
        }
        self.values = values;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logit_beta_density_matches_change_of_variables() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h: f64 = inv_logit(x);
            let expected = (2.0 * (1.0 - h)).ln() + h.ln() + (1.0 - h).ln();
            assert_relative_eq!(PriorKind::LogitBeta12.log_density(x), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_gamma_density_integrates_to_one() {
        let p = PriorKind::LogGamma { shape: 2.3 };
        let dx = 1e-3;
        let s: f64 = (-20_000..8_000)
            .map(|i| p.log_density(i as f64 * dx).exp() * dx)
            .sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn beta_prior_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 50_000;
        let m: f64 = (0..n)
            .map(|_| inv_logit(PriorKind::LogitBeta12.sample(&mut rng)))
            .sum::<f64>()
            / n as f64;
        assert!((m - 1.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn keep_increments_roundtrip() {
        let cfg = crate::dataio::synthetic::desk_config();
        let layout = Arc::new(Layout::new(&cfg));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParameterSet::sample_prior(layout, 3.0, &mut rng);
        let before = p.increments(Walk::Survival);
        let traj = p.logit_trajectory(Walk::Survival, 2);
        let lam = DMatrix::from_row_slice(3, 3, &[5.0, 1.0, 0.0, 1.0, 4.0, 0.5, 0.0, 0.5, 3.0]);
        p.set_precision_keep_increments(Walk::Survival, lam).unwrap();
        let after = p.increments(Walk::Survival);
        assert!((before - after).abs().max() < 1e-10);
        let traj2 = p.logit_trajectory(Walk::Survival, 2);
        for (a, b) in traj.iter().zip(&traj2) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn layout_counts() {
        let cfg = crate::dataio::synthetic::desk_config();
        let layout = Layout::new(&cfg);
        assert_eq!(layout.names.len(), layout.len());
        let n_h: usize = layout.priors.iter().filter(|p| p.is_rate()).count();
        let sea: usize = cfg
            .fisheries
            .iter()
            .map(|f| f.n_slots(cfg.labrador) * cfg.n_years)
            .sum();
        assert_eq!(n_h, sea + 2 * cfg.n_years * cfg.n_su());
    }
}
