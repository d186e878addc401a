//! Convergence diagnostics: split-R̂ and effective sample size.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiagnosticError {
    #[error("at least two chains are required, got {0}")]
    TooFewChains(usize),
    #[error("chains must have equal lengths")]
    UnequalLengths,
    #[error("chains must hold at least 10 draws, got {0}")]
    TooShort(usize),
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn check(chains: &[&[f64]], min_chains: usize) -> Result<usize, DiagnosticError> {
    if chains.len() < min_chains {
        return Err(DiagnosticError::TooFewChains(chains.len()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(DiagnosticError::UnequalLengths);
    }
    if n < 10 {
        return Err(DiagnosticError::TooShort(n));
    }
    Ok(n)
}

/// Split-R̂: each chain is halved and the classic potential scale reduction
/// computed over the halves. A series with no variance at all gives 1, and
/// so do chains that are all bit-identical copies of one another.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<f64, DiagnosticError> {
    let n = check(chains, 2)?;
    if chains[1..].iter().all(|c| c == &chains[0]) {
        return Ok(1.0);
    }
    let half = n / 2;
    let splits: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect();
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let w = splits
        .iter()
        .zip(&means)
        .map(|(s, &m)| var(s, m))
        .sum::<f64>()
        / splits.len() as f64;
    let b_over_n = var(&means, mean(&means));
    if w <= 0.0 {
        return Ok(if b_over_n <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    let nh = half as f64;
    let var_plus = (nh - 1.0) / nh * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EssFlag {
    Ok,
    /// No variance; ESS reported as the number of draws.
    Constant,
    /// Antithetic draws pushed the estimate above the number of draws.
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub ess: f64,
    pub flag: EssFlag,
}

/// Multi-chain effective sample size with Geyer's initial monotone
/// sequence estimator. Accepts a single chain.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<Ess, DiagnosticError> {
    let n = check(chains, 1)?;
    let m = chains.len();
    let total = (m * n) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains.iter().zip(&means).map(|(c, &mu)| var(c, mu)).collect();
    let w = mean(&vars);
    let b_over_n = if m > 1 { var(&means, mean(&means)) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if !(var_plus > 0.0) || !(w > 0.0) {
        return Ok(Ess {
            ess: total,
            flag: EssFlag::Constant,
        });
    }
    let centred: Vec<Vec<f64>> = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| c.iter().map(|v| v - mu).collect())
        .collect();
    // biased autocovariance, averaged over chains
    let acov = |lag: usize| -> f64 {
        centred
            .iter()
            .map(|c| {
                c[..n - lag]
                    .iter()
                    .zip(&c[lag..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| -> f64 {
        if lag == 0 {
            1.0
        } else {
            1.0 - (w * (n as f64 - 1.0) / n as f64 - acov(lag)) / var_plus
        }
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 1;
    }
    let ess = total / tau;
    if !(tau > 0.0) || ess > total || !ess.is_finite() {
        return Ok(Ess {
            ess: total,
            flag: EssFlag::Capped,
        });
    }
    Ok(Ess {
        ess,
        flag: EssFlag::Ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, mu: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| mu + rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    #[test]
    fn constant_chains_give_one() {
        let c = vec![2.5; 100];
        assert_eq!(gelman_rubin(&[&c, &c]).unwrap(), 1.0);
    }

    #[test]
    fn identical_chains_give_one() {
        let c = normals(1, 2000, 0.0);
        assert_eq!(gelman_rubin(&[&c, &c, &c]).unwrap(), 1.0);
        let mut d = c.clone();
        d[7] += 1e-3;
        let r = gelman_rubin(&[&c, &d]).unwrap();
        assert!(r != 1.0 && (r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn separated_chains() {
        let a = normals(1, 1000, 0.0);
        let b = normals(2, 1000, 10.0);
        assert!(gelman_rubin(&[&a, &b]).unwrap() > 3.0);
    }

    #[test]
    fn separated_chains_against_textbook_formula() {
        let a: Vec<f64> = (0..20).map(|i| (i % 4) as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| 10.0 + (i % 4) as f64).collect();
        // halves: means 1.4 / 1.6 for a (pattern 0123012301), 11.4 / 11.6 for b
        let halves: Vec<Vec<f64>> = vec![
            a[..10].to_vec(),
            a[10..].to_vec(),
            b[..10].to_vec(),
            b[10..].to_vec(),
        ];
        let ms: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / 10.0).collect();
        let w: f64 = halves
            .iter()
            .zip(&ms)
            .map(|(h, m)| h.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 9.0)
            .sum::<f64>()
            / 4.0;
        let mm = ms.iter().sum::<f64>() / 4.0;
        let b_n = ms.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / 3.0;
        let expected = ((0.9 * w + b_n) / w).sqrt();
        let got = gelman_rubin(&[&a, &b]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(got > 3.0);
    }

    #[test]
    fn iid_chains_converged() {
        let a = normals(3, 10_000, 0.0);
        let b = normals(4, 10_000, 0.0);
        assert!(gelman_rubin(&[&a, &b]).unwrap() < 1.01);
    }

    #[test]
    fn single_chain_is_an_error() {
        let a = normals(3, 100, 0.0);
        assert_eq!(gelman_rubin(&[&a]), Err(DiagnosticError::TooFewChains(1)));
    }

    #[test]
    fn iid_ess() {
        let a = normals(5, 10_000, 0.0);
        let e = effective_sample_size(&[&a]).unwrap();
        assert!(e.ess > 8000.0 && e.ess < 12000.0, "{e:?}");
    }

    #[test]
    fn ar1_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = 0.9;
        let n = 100_000;
        let mut x = 0.0;
        let s = (1.0f64 - rho * rho).sqrt();
        let chain: Vec<f64> = (0..n)
            .map(|_| {
                x = rho * x + s * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let e = effective_sample_size(&[&chain]).unwrap();
        let expected = n as f64 * (1.0 - rho) / (1.0 + rho);
        assert!((e.ess / expected - 1.0).abs() < 0.3, "{e:?} vs {expected}");
    }

    #[test]
    fn alternating_is_capped() {
        let c: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let e = effective_sample_size(&[&c, &c]).unwrap();
        assert_eq!(e.flag, EssFlag::Capped);
        assert_eq!(e.ess, 2000.0);
    }

    #[test]
    fn constant_is_flagged() {
        let c = vec![1.0; 50];
        let e = effective_sample_size(&[&c]).unwrap();
        assert_eq!(e.flag, EssFlag::Constant);
        assert_eq!(e.ess, 50.0);
    }
}
