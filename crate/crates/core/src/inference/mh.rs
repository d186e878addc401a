//! Adaptive random-walk Metropolis for one block of unconstrained scalars.
//!
//! The proposal covariance follows the running empirical covariance of the
//! block (Haario et al.) and a global scale is tuned by Robbins–Monro
//! toward the target acceptance rate. Both adapt only until [`freeze`] is
//! called, after which the kernel is a fixed symmetric random walk.
//!
//! [`freeze`]: AdaptiveMetropolis::freeze

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Iterations between refreshes of the proposal factor.
const REFACTOR_EVERY: u64 = 25;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveMetropolis {
    dim: usize,
    log_scale: f64,
    target: f64,
    initial_sd: Vec<f64>,
    mean: Vec<f64>,
    /// Sum of outer products of deviations (Welford).
    m2: Vec<f64>,
    n_obs: u64,
    /// Lower factor of the unscaled proposal covariance, row-major.
    factor: Vec<f64>,
    adapting: bool,
    iter: u64,
    proposed: u64,
    accepted: u64,
}

impl AdaptiveMetropolis {
    /// Kernel starting from independent proposals with the given per-scalar
    /// standard deviations.
    pub fn new(initial_sd: Vec<f64>) -> Self {
        let d = initial_sd.len();
        let mut factor = vec![0.0; d * d];
        for (i, s) in initial_sd.iter().enumerate() {
            factor[i * d + i] = *s;
        }
        Self {
            dim: d,
            log_scale: (2.38 / (d.max(1) as f64).sqrt()).ln(),
            target: if d == 1 { 0.44 } else { 0.234 },
            initial_sd,
            mean: vec![0.0; d],
            m2: vec![0.0; d * d],
            n_obs: 0,
            factor,
            adapting: true,
            iter: 0,
            proposed: 0,
            accepted: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn set_scale(&mut self, s: f64) {
        self.log_scale = s.ln();
    }

    pub fn is_adapting(&self) -> bool {
        self.adapting
    }

    /// Stop adapting; the proposal is fixed from here on.
    pub fn freeze(&mut self) {
        self.adapting = false;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn reset_counters(&mut self) {
        self.proposed = 0;
        self.accepted = 0;
    }

    /// Write a proposal around `x` into `out`.
    pub fn propose<R: Rng + ?Sized>(&self, x: &[f64], out: &mut [f64], rng: &mut R) {
        let d = self.dim;
        let s = self.scale();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            let mut v = 0.0;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                v += self.factor[i * d + j] * zj;
            }
            out[i] = x[i] + s * v;
        }
    }

    /// Record the outcome of one step: `alpha` is the acceptance probability
    /// and `x` the state after the accept/reject decision.
    pub fn record(&mut self, x: &[f64], alpha: f64, accepted: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
        if !self.adapting {
            return;
        }
        self.iter += 1;
        let gamma = (self.iter as f64).powf(-0.6);
        let a = if alpha.is_nan() { 0.0 } else { alpha.min(1.0) };
        self.log_scale = (self.log_scale + gamma * (a - self.target)).clamp(-12.0, 4.0);

        let d = self.dim;
        self.n_obs += 1;
        let n = self.n_obs as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(xi, m)| xi - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for i in 0..d {
            let di2 = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += delta[j] * di2;
            }
        }
        if self.n_obs >= (2 * d as u64).max(50) && self.iter % REFACTOR_EVERY == 0 {
            self.refactor();
        }
    }

    fn refactor(&mut self) {
        let d = self.dim;
        let n = self.n_obs as f64;
        let cov = DMatrix::from_fn(d, d, |i, j| {
            let c = 0.5 * (self.m2[i * d + j] + self.m2[j * d + i]) / (n - 1.0);
            if i == j {
                c + 1e-6 * self.initial_sd[i] * self.initial_sd[i] + 1e-12
            } else {
                c
            }
        });
        if let Some(ch) = Cholesky::new(cov) {
            let l = ch.l();
            for i in 0..d {
                for j in 0..d {
                    self.factor[i * d + j] = l[(i, j)];
                }
            }
        }
    }

    /// Unscaled proposal covariance currently in use.
    pub fn proposal_covariance(&self) -> DMatrix<f64> {
        let d = self.dim;
        let l = DMatrix::from_row_slice(d, d, &self.factor);
        &l * l.transpose()
    }

    pub fn empirical_mean(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }
}

/// One Metropolis step on `x` against `log_target`; `logp` holds the
/// current log target and is updated on acceptance.
pub fn mh_update_block<R, F>(
    kernel: &mut AdaptiveMetropolis,
    x: &mut [f64],
    logp: &mut f64,
    mut log_target: F,
    rng: &mut R,
) -> bool
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    let mut prop = vec![0.0; x.len()];
    kernel.propose(x, &mut prop, rng);
    let lp = log_target(&prop);
    let log_alpha = lp - *logp;
    let alpha = if log_alpha.is_nan() {
        0.0
    } else {
        log_alpha.min(0.0).exp()
    };
    let u: f64 = rng.random();
    let accepted = u < alpha;
    if accepted {
        x.copy_from_slice(&prop);
        *logp = lp;
    }
    kernel.record(x, alpha, accepted);
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tiny_scale_accepts_almost_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut k = AdaptiveMetropolis::new(vec![1.0]);
        k.freeze();
        k.set_scale(1e-8);
        let mut x = [0.3];
        let mut lp = -0.5 * 0.09;
        for _ in 0..2000 {
            mh_update_block(&mut k, &mut x, &mut lp, |v| -0.5 * v[0] * v[0], &mut rng);
        }
        assert!(k.acceptance_rate() > 0.999);
    }

    #[test]
    fn one_dimensional_normal_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mu, sd) = (1.5, 2.0);
        let target = |v: &[f64]| -0.5 * ((v[0] - mu) / sd).powi(2);
        let mut k = AdaptiveMetropolis::new(vec![1.0]);
        let mut x = [0.0];
        let mut lp = target(&x);
        for _ in 0..5000 {
            mh_update_block(&mut k, &mut x, &mut lp, target, &mut rng);
        }
        k.freeze();
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                mh_update_block(&mut k, &mut x, &mut lp, target, &mut rng);
                x[0]
            })
            .collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let ess = crate::inference::diagnostics::effective_sample_size(&[&draws])
            .unwrap()
            .ess;
        let se_mean = (v / ess).sqrt();
        // variance of the sample variance of a normal is 2σ⁴/n
        let se_var = (2.0 * sd.powi(4) / ess).sqrt();
        assert!((m - mu).abs() < 3.0 * se_mean, "mean {m}");
        assert!((v - sd * sd).abs() < 3.0 * se_var, "var {v}");
        let rate = k.acceptance_rate();
        assert!(rate > 0.3 && rate < 0.6, "rate {rate}");
    }

    #[test]
    fn frozen_scale_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut k = AdaptiveMetropolis::new(vec![1.0, 1.0]);
        let mut x = [0.0, 0.0];
        let target = |v: &[f64]| -0.5 * (v[0] * v[0] + v[1] * v[1]);
        let mut lp = 0.0;
        for _ in 0..500 {
            mh_update_block(&mut k, &mut x, &mut lp, target, &mut rng);
        }
        k.freeze();
        let s = k.scale();
        let c = k.proposal_covariance();
        for _ in 0..500 {
            mh_update_block(&mut k, &mut x, &mut lp, target, &mut rng);
        }
        assert_eq!(k.scale(), s);
        assert_eq!(k.proposal_covariance(), c);
    }

    #[test]
    fn bivariate_gaussian_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 2.0]);
        let prec = cov.clone().try_inverse().unwrap();
        let target = move |v: &[f64]| {
            let x = DVector::from_column_slice(v);
            -0.5 * (x.transpose() * &prec * &x)[(0, 0)]
        };
        let mut k = AdaptiveMetropolis::new(vec![0.5, 0.5]);
        let mut x = [0.0, 0.0];
        let mut lp = target(&x);
        for _ in 0..20_000 {
            mh_update_block(&mut k, &mut x, &mut lp, &target, &mut rng);
        }
        k.freeze();
        let n = 100_000;
        let mut s = DMatrix::<f64>::zeros(2, 2);
        let mut m = DVector::<f64>::zeros(2);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            mh_update_block(&mut k, &mut x, &mut lp, &target, &mut rng);
            draws.push(DVector::from_column_slice(&x));
            m += DVector::from_column_slice(&x);
        }
        m /= n as f64;
        for d in &draws {
            let e = d - &m;
            s += &e * e.transpose();
        }
        s /= (n - 1) as f64;
        let rel = (&s - &cov).norm() / cov.norm();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
    }
}
