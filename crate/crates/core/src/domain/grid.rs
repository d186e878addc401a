use serde::{Deserialize, Serialize};

/// Dense year-by-stock-unit array, stored year-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSu {
    n_years: usize,
    n_su: usize,
    values: Vec<f64>,
}

impl YearSu {
    pub fn zeros(n_years: usize, n_su: usize) -> Self {
        Self::filled(n_years, n_su, 0.0)
    }

    pub fn filled(n_years: usize, n_su: usize, v: f64) -> Self {
        Self {
            n_years,
            n_su,
            values: vec![v; n_years * n_su],
        }
    }

    pub fn from_fn(n_years: usize, n_su: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_years * n_su);
        for t in 0..n_years {
            for r in 0..n_su {
                values.push(f(t, r));
            }
        }
        Self {
            n_years,
            n_su,
            values,
        }
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn n_su(&self) -> usize {
        self.n_su
    }

    #[inline]
    pub fn get(&self, t: usize, r: usize) -> f64 {
        self.values[t * self.n_su + r]
    }

    #[inline]
    pub fn set(&mut self, t: usize, r: usize, v: f64) {
        self.values[t * self.n_su + r] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_su..(t + 1) * self.n_su]
    }

    pub fn column(&self, r: usize) -> Vec<f64> {
        (0..self.n_years).map(|t| self.get(t, r)).collect()
    }

    pub fn has_shape(&self, n_years: usize, n_su: usize) -> bool {
        self.n_years == n_years && self.n_su == n_su && self.values.len() == n_years * n_su
    }
}
