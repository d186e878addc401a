//! Pooled posterior summaries and convergence tables.

use serde::{Deserialize, Serialize};

use super::diagnostics::{effective_sample_size, gelman_rubin, EssFlag};
use super::mcmc::ChainOutput;

/// Default credible-interval quantiles: 90% interval and median.
pub const DEFAULT_QUANTILES: [f64; 3] = [0.05, 0.5, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantitySummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    /// Pairs of (probability, quantile).
    pub quantiles: Vec<(f64, f64)>,
}

impl QuantitySummary {
    pub fn quantile(&self, p: f64) -> Option<f64> {
        self.quantiles
            .iter()
            .find(|(q, _)| (q - p).abs() < 1e-12)
            .map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub name: String,
    /// `None` when fewer than two chains or too few draws.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    pub ess_flag: Option<EssFlag>,
}

/// Sample quantile with linear interpolation between order statistics
/// (type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Summary of a pooled sample.
pub fn summarize(name: &str, draws: &[f64], quantiles: &[f64]) -> QuantitySummary {
    let n = draws.len();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    QuantitySummary {
        name: name.to_string(),
        mean,
        sd,
        median: quantile_sorted(&sorted, 0.5),
        quantiles: quantiles
            .iter()
            .map(|&p| (p, quantile_sorted(&sorted, p)))
            .collect(),
    }
}

/// Medians, means and requested quantiles of every monitored scalar,
/// pooling all chains. Natural-scale rates and correlations are monitored
/// per draw, so their summaries come straight from the draws.
pub fn posterior_summary(output: &ChainOutput, quantiles: &[f64]) -> Vec<QuantitySummary> {
    (0..output.n_names())
        .map(|col| {
            let pooled: Vec<f64> = output.column(col).into_iter().flatten().collect();
            summarize(&output.names[col], &pooled, quantiles)
        })
        .collect()
}

/// Split-R̂ and effective sample size of every monitored scalar.
pub fn convergence_table(output: &ChainOutput) -> Vec<Convergence> {
    (0..output.n_names())
        .map(|col| {
            let cols = output.column(col);
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            let rhat = gelman_rubin(&refs).ok();
            let ess = effective_sample_size(&refs).ok();
            Convergence {
                name: output.names[col].clone(),
                rhat,
                ess: ess.as_ref().map(|e| e.ess),
                ess_flag: ess.map(|e| e.flag),
            }
        })
        .collect()
}

/// Largest R̂ over the table, ignoring scalars without one.
pub fn max_rhat(table: &[Convergence]) -> Option<(&str, f64)> {
    table
        .iter()
        .filter_map(|c| c.rhat.map(|r| (c.name.as_str(), r)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_draws_give_equal_quantiles() {
        let s = summarize("c", &[2.5; 40], &DEFAULT_QUANTILES);
        for (_, q) in &s.quantiles {
            assert_eq!(*q, 2.5);
        }
        assert_eq!(s.median, 2.5);
        assert_eq!(s.sd, 0.0);
    }

    #[test]
    fn type7_matches_hand_values() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert!((quantile_sorted(&v, 0.1) - 1.3).abs() < 1e-12);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
    }

    #[test]
    fn normal_median_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = summarize("z", &d, &DEFAULT_QUANTILES);
        assert!(s.median.abs() < 0.01);
        assert!((s.quantile(0.95).unwrap() - 1.6449).abs() < 0.03);
    }
}
