//! Single-step transitions of the life cycle. Each stochastic transition has
//! a deterministic form taking a standard-normal innovation, used by the
//! reconstruction in [`super::reconstruct`], and a sampling form taking an rng.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::LifecycleError;
use crate::domain::{FixedBioParams, SeaAge};

/// Log-scale variance of a lognormal with coefficient of variation `cv`.
#[inline]
pub fn lognormal_sigma2(cv: f64) -> f64 {
    (cv * cv).ln_1p()
}

/// Mean-preserving lognormal perturbation of `mean` by standard-normal `z`.
#[inline]
pub fn jitter(mean: f64, sigma2: f64, z: f64) -> f64 {
    mean * (sigma2.sqrt() * z - 0.5 * sigma2).exp()
}

/// Eggs potentially spawned by 1SW and 2SW spawners.
pub fn compute_eggs(spawners_1sw: f64, spawners_2sw: f64, bio: &FixedBioParams) -> f64 {
    spawners_1sw * bio.eggs1 + spawners_2sw * bio.eggs2
}

/// Total smolts of a cohort given the egg-to-smolt innovation `z`.
pub fn smolt_cohort(eggs: f64, bio: &FixedBioParams, z: f64) -> f64 {
    if eggs <= 0.0 {
        return 0.0;
    }
    jitter(bio.theta1_mean * eggs, lognormal_sigma2(bio.theta1_cv), z)
}

pub fn draw_smolt_cohort<R: Rng + ?Sized>(eggs: f64, bio: &FixedBioParams, rng: &mut R) -> f64 {
    if eggs <= 0.0 {
        return 0.0;
    }
    smolt_cohort(eggs, bio, rng.sample(StandardNormal))
}

/// Smolt-age proportions from log-gamma auxiliaries on the positive-psm
/// support. Ages outside the support are exactly zero.
pub fn smolt_split_from_log_gammas(n_ages: usize, support: &[usize], log_g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n_ages];
    smolt_split_into(support, log_g, &mut out);
    out
}

/// In-place form of [`smolt_split_from_log_gammas`]; `out` has one entry
/// per smolt age.
pub fn smolt_split_into(support: &[usize], log_g: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    match support.len() {
        0 => {}
        1 => out[support[0]] = 1.0,
        _ => {
            let m = log_g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (k, &a) in support.iter().enumerate() {
                let w = (log_g[k] - m).exp();
                out[a] = w;
                s += w;
            }
            for &a in support {
                out[a] /= s;
            }
        }
    }
}

/// Log of a Gamma(`shape`, 1) draw, floored to stay finite.
pub fn draw_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0)
        .expect("positive gamma shape")
        .sample(rng);
    g.max(f64::MIN_POSITIVE).ln()
}

/// Dirichlet(`eta_sample`·psm) draw restricted to ages with positive psm.
pub fn draw_smolt_age_split<R: Rng + ?Sized>(bio: &FixedBioParams, rng: &mut R) -> Vec<f64> {
    let support = bio.age_support();
    let log_g: Vec<f64> = if support.len() > 1 {
        support
            .iter()
            .map(|&a| draw_log_gamma(bio.eta_sample * bio.psm[a], rng))
            .collect()
    } else {
        Vec::new()
    };
    let mut p = smolt_split_from_log_gammas(bio.psm.len(), &support, &log_g);
    // Renormalise so the draw sits on the simplex to rounding.
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|x| *x /= s);
    }
    p
}

/// Migration year of smolts of cohort `cohort` leaving at age `age`
/// (1-based): `cohort + age + 1`.
#[inline]
pub fn migration_year(cohort: i64, age: usize) -> i64 {
    cohort + age as i64 + 1
}

/// Jittered smolts by age for one cohort, accumulated into `n3`, which holds
/// migrating smolts for years `offset..offset + n3.len()`. Contributions
/// outside that window are dropped. Returns the per-age counts.
pub fn allocate_and_sum_smolts(
    cohort: i64,
    n2: f64,
    theta2: &[f64],
    jitter_sigma2: f64,
    age_innovations: &[f64],
    n3: &mut [f64],
    offset: i64,
) -> Vec<f64> {
    let mut by_age = vec![0.0; theta2.len()];
    allocate_smolts_into(cohort, n2, theta2, jitter_sigma2, age_innovations, n3, offset, &mut by_age);
    by_age
}

/// In-place form of [`allocate_and_sum_smolts`] writing the per-age counts
/// to `by_age`.
#[allow(clippy::too_many_arguments)]
pub fn allocate_smolts_into(
    cohort: i64,
    n2: f64,
    theta2: &[f64],
    jitter_sigma2: f64,
    age_innovations: &[f64],
    n3: &mut [f64],
    offset: i64,
    by_age: &mut [f64],
) {
    for (a, &p) in theta2.iter().enumerate() {
        if p <= 0.0 {
            by_age[a] = 0.0;
            continue;
        }
        let v = jitter(p * n2, jitter_sigma2, age_innovations[a]);
        by_age[a] = v;
        let idx = migration_year(cohort, a + 1) - offset;
        if idx >= 0 && (idx as usize) < n3.len() {
            n3[idx as usize] += v;
        }
    }
}

/// Lower Cholesky factor of a covariance matrix. Positive semi-definite
/// matrices with zero directions get a factor with zero columns.
pub fn covariance_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>, LifecycleError> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(LifecycleError::NotSquare);
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(LifecycleError::NotPsd);
    }
    if let Some(c) = Cholesky::new(sigma.clone()) {
        return Ok(c.l());
    }
    // Semi-definite fallback through the eigendecomposition.
    let eig = sigma.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-10) {
        return Err(LifecycleError::NotPsd);
    }
    let mut b = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        b.column_mut(j).scale_mut(s);
    }
    Ok(b)
}

/// One step of a multivariate Gaussian random walk.
pub fn step_random_walk<R: Rng + ?Sized>(
    current: &DVector<f64>,
    sigma: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>, LifecycleError> {
    if sigma.nrows() != current.len() {
        return Err(LifecycleError::Dimension {
            what: "covariance",
            expected: current.len(),
            got: sigma.nrows(),
        });
    }
    let l = covariance_factor(sigma)?;
    let z = DVector::from_fn(current.len(), |_, _| rng.sample(StandardNormal));
    Ok(current + l * z)
}

/// First-year logits, independent standard normals.
pub fn draw_first_logits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Correlation matrix `D^{-1/2} Σ D^{-1/2}`.
pub fn correlation_from_covariance(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>, LifecycleError> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(LifecycleError::NotSquare);
    }
    let d: Vec<f64> = (0..n).map(|i| sigma[(i, i)]).collect();
    if let Some(i) = d.iter().position(|v| !(*v > 0.0)) {
        return Err(LifecycleError::NonPositiveVariance(i));
    }
    let s: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (sigma[(i, j)] / (s[i] * s[j])).clamp(-1.0, 1.0)
        }
    }))
}

/// Post-smolt survival to the pre-fishery stage.
pub fn survive_to_pfa<R: Rng + ?Sized>(n3: f64, theta3: f64, cv: f64, rng: &mut R) -> f64 {
    jitter(theta3 * n3, lognormal_sigma2(cv), rng.sample(StandardNormal))
}

/// Maturing and non-maturing components of the PFA, drawn independently.
pub fn split_maturation<R: Rng + ?Sized>(
    n4: f64,
    theta4: f64,
    cv: f64,
    rng: &mut R,
) -> (f64, f64) {
    let s2 = lognormal_sigma2(cv);
    let m = jitter(theta4 * n4, s2, rng.sample(StandardNormal));
    let nm = jitter((1.0 - theta4) * n4, s2, rng.sample(StandardNormal));
    (m, nm)
}

/// Catch and escapement of a fishery with harvest rate `h`.
#[inline]
pub fn apply_fishery(n: f64, h: f64) -> (f64, f64) {
    let catch = h * n;
    (catch, n - catch)
}

/// Survivors after `delta` months at monthly natural mortality `m`.
#[inline]
pub fn apply_natural_mortality(n: f64, m: f64, delta: f64) -> f64 {
    n * (-m * delta).exp()
}

/// Inputs of the spawner transition for one sea age.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpawnerInputs {
    pub returns: f64,
    pub returns_prev: f64,
    pub h_hw: f64,
    pub h_hw_prev: f64,
    pub p_del: f64,
    pub p_del_prev: f64,
    pub h_del: f64,
    pub stocking: f64,
}

/// Spawners after homewater fisheries, delayed spawning and stocking.
/// Stocking only applies to 2SW fish.
pub fn compute_spawners(age: SeaAge, x: &SpawnerInputs) -> f64 {
    let now = (1.0 - x.h_hw) * (1.0 - x.p_del) * x.returns;
    let delayed = (1.0 - x.h_hw_prev) * x.p_del_prev * (1.0 - x.h_del) * x.returns_prev;
    match age {
        SeaAge::OneSW => now + delayed,
        SeaAge::TwoSW => now + delayed + x.stocking,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tables::bio_row;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn eggs_examples() {
        let lb = bio_row(0);
        assert_eq!(compute_eggs(0.0, 0.0, &lb), 0.0);
        assert_eq!(compute_eggs(100.0, 10.0, &lb), 205_000.0);
        let us = bio_row(5);
        assert_eq!(compute_eggs(50.0, 0.0, &us), 10_000.0);
    }

    #[test]
    fn egg_to_smolt_variance() {
        assert_relative_eq!(lognormal_sigma2(0.4), 1.16f64.ln(), epsilon = 1e-15);
        assert!((lognormal_sigma2(0.4) - 0.14842).abs() < 1e-5);
    }

    #[test]
    fn smolt_cohort_mean() {
        let bio = bio_row(3);
        let mut r = rng();
        let n = 100_000;
        let m = (0..n).map(|_| draw_smolt_cohort(1e6, &bio, &mut r)).sum::<f64>() / n as f64;
        assert!((m / 7000.0 - 1.0).abs() < 0.01, "{m}");
        assert_eq!(draw_smolt_cohort(0.0, &bio, &mut r), 0.0);
    }

    #[test]
    fn smolt_split_mean_and_simplex() {
        let bio = bio_row(2);
        let mut r = rng();
        let n = 100_000;
        let mut acc = vec![0.0; 6];
        for _ in 0..n {
            let p = draw_smolt_age_split(&bio, &mut r);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(p[0], 0.0);
            for (a, v) in p.iter().enumerate() {
                acc[a] += v;
            }
        }
        for a in 0..6 {
            assert!((acc[a] / n as f64 - bio.psm[a]).abs() < 0.005, "age {a}");
        }
    }

    #[test]
    fn degenerate_split() {
        let bio = FixedBioParams::new(1.0, 1.0, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut r = rng();
        for _ in 0..10 {
            assert_eq!(draw_smolt_age_split(&bio, &mut r), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn age_two_only_indexing() {
        let mut n3 = vec![0.0; 10];
        let theta2 = [0.0, 1.0, 0.0];
        allocate_and_sum_smolts(4, 100.0, &theta2, 1e-4, &[0.0; 3], &mut n3, 0);
        let hit: Vec<usize> = (0..10).filter(|&i| n3[i] > 0.0).collect();
        assert_eq!(hit, vec![7]);
    }

    #[test]
    fn two_cohorts_add_exactly() {
        let mut n3 = vec![0.0; 10];
        let a = allocate_and_sum_smolts(3, 50.0, &[1.0, 0.0], 1e-4, &[0.3, 0.0], &mut n3, 0);
        let b = allocate_and_sum_smolts(2, 70.0, &[0.0, 1.0], 1e-4, &[0.0, -0.2], &mut n3, 0);
        assert_eq!(n3[5], a[0] + b[1]);
    }

    #[test]
    fn zero_covariance_walk_is_constant() {
        let cur = DVector::from_vec(vec![0.3, -1.0]);
        let out = step_random_walk(&cur, &DMatrix::zeros(2, 2), &mut rng()).unwrap();
        assert_eq!(out, cur);
    }

    #[test]
    fn identity_walk_covariance() {
        let mut r = rng();
        let cur = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let sigma = DMatrix::identity(3, 3);
        let n = 100_000;
        let mut mean = DVector::zeros(3);
        let mut cov = DMatrix::zeros(3, 3);
        for _ in 0..n {
            let d = step_random_walk(&cur, &sigma, &mut r).unwrap() - &cur;
            mean += &d;
            cov += &d * d.transpose();
        }
        mean /= n as f64;
        cov /= n as f64;
        for i in 0..3 {
            assert!(mean[i].abs() < 3.0 / (n as f64).sqrt(), "{mean}");
        }
        assert!((cov - sigma).norm() / 3f64.sqrt() < 0.05);
    }

    #[test]
    fn non_psd_walk_errors() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let cur = DVector::zeros(2);
        assert!(step_random_walk(&cur, &sigma, &mut rng()).is_err());
    }

    #[test]
    fn correlation_examples() {
        let rho = correlation_from_covariance(&DMatrix::from_diagonal_element(3, 3, 2.5)).unwrap();
        assert_eq!(rho, DMatrix::identity(3, 3));
        let rho =
            correlation_from_covariance(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0]))
                .unwrap();
        assert_eq!(rho, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let rho = correlation_from_covariance(&DMatrix::from_element(1, 1, 7.0)).unwrap();
        assert_eq!(rho[(0, 0)], 1.0);
        let zero = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            correlation_from_covariance(&zero),
            Err(LifecycleError::NonPositiveVariance(0))
        ));
    }

    #[test]
    fn pfa_and_maturation() {
        let mut r = rng();
        let n = 10_000;
        let m = (0..n).map(|_| survive_to_pfa(1000.0, 0.2, 0.01, &mut r)).sum::<f64>() / n as f64;
        assert!((m / 200.0 - 1.0).abs() < 0.005);
        let mut s = 0.0;
        for _ in 0..n {
            let (a, b) = split_maturation(1000.0, 0.3, 0.01, &mut r);
            s += a + b;
        }
        assert!((s / n as f64 / 1000.0 - 1.0).abs() < 0.005);
        let (a, b) = split_maturation(1000.0, 1.0, 1e-12, &mut r);
        assert_relative_eq!(a, 1000.0, max_relative = 1e-5);
        assert_eq!(b, 0.0);
    }

    #[test]
    fn fishery_examples() {
        assert_eq!(apply_fishery(1000.0, 0.0), (0.0, 1000.0));
        assert_eq!(apply_fishery(1000.0, 1.0), (1000.0, 0.0));
        assert_eq!(apply_fishery(1000.0, 0.3), (300.0, 700.0));
    }

    #[test]
    fn mortality_examples() {
        assert_eq!(apply_natural_mortality(1000.0, 0.03, 0.0), 1000.0);
        assert!((apply_natural_mortality(1000.0, 0.03, 7.0) - 810.58).abs() < 0.005);
        assert!((apply_natural_mortality(1000.0, 0.03, 12.0) - 697.68).abs() < 0.005);
    }

    #[test]
    fn spawner_examples() {
        let x = SpawnerInputs {
            returns: 1000.0,
            h_hw: 0.2,
            ..Default::default()
        };
        assert_relative_eq!(compute_spawners(SeaAge::OneSW, &x), 800.0, epsilon = 1e-12);
        let x = SpawnerInputs {
            returns_prev: 1000.0,
            p_del_prev: 0.1,
            ..Default::default()
        };
        assert_relative_eq!(compute_spawners(SeaAge::OneSW, &x), 100.0, epsilon = 1e-12);
        let x = SpawnerInputs {
            returns: 1000.0,
            h_hw: 0.2,
            stocking: 50.0,
            ..Default::default()
        };
        assert_relative_eq!(compute_spawners(SeaAge::TwoSW, &x), 850.0, epsilon = 1e-12);
        assert_relative_eq!(compute_spawners(SeaAge::OneSW, &x), 800.0, epsilon = 1e-12);
    }
}
