//! Wishart sampling and the conjugate update of a random-walk precision.

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WishartError {
    #[error("scale matrix is singular or not positive definite")]
    SingularScale,
    #[error("degrees of freedom {dof} must exceed dimension minus one ({dim})")]
    Dof { dof: f64, dim: usize },
    #[error("increments contain non-finite values")]
    NonFinite,
    #[error("increments have {got} columns, prior scale is {expected}x{expected}")]
    Dimension { expected: usize, got: usize },
}

/// Draw from Wishart(`scale`, `dof`) by the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>, WishartError> {
    let p = scale.nrows();
    if dof <= p as f64 - 1.0 {
        return Err(WishartError::Dof { dof, dim: p });
    }
    let l = Cholesky::new(scale.clone())
        .ok_or(WishartError::SingularScale)?
        .l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64).map_err(|_| WishartError::Dof { dof, dim: p })?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    Ok((&w + w.transpose()) * 0.5)
}

/// Posterior scale and degrees of freedom of a precision matrix given
/// zero-mean Gaussian increments (rows of `increments`) and a
/// Wishart(`omega`, `delta`) prior.
pub fn precision_posterior(
    increments: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    delta: f64,
) -> Result<(DMatrix<f64>, f64), WishartError> {
    let n = omega.nrows();
    if increments.ncols() != n {
        return Err(WishartError::Dimension {
            expected: n,
            got: increments.ncols(),
        });
    }
    if increments.iter().any(|v| !v.is_finite()) {
        return Err(WishartError::NonFinite);
    }
    let omega_inv = Cholesky::new(omega.clone())
        .ok_or(WishartError::SingularScale)?
        .inverse();
    let s = increments.transpose() * increments;
    let post = Cholesky::new(omega_inv + s)
        .ok_or(WishartError::SingularScale)?
        .inverse();
    Ok(((&post + post.transpose()) * 0.5, delta + increments.nrows() as f64))
}

/// Gibbs draw of the precision matrix from its conjugate posterior
/// Wishart((Ω⁻¹ + S)⁻¹, δ + n) with `S` the increment cross-product and `n`
/// the number of increments.
pub fn gibbs_update_precision<R: Rng + ?Sized>(
    increments: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    delta: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>, WishartError> {
    let (scale, dof) = precision_posterior(increments, omega, delta)?;
    sample_wishart(&scale, dof, rng)
}
