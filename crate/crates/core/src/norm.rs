//! Running observation normalizer (Welford). Attacks and policies operate on
//! normalized observations so a single perturbation budget is meaningful
//! across mixed-unit state dimensions.

use serde::{Deserialize, Serialize};

/// Running per-dimension mean/variance with a frozen-application mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObsNormalizer {
    mean: Vec<f64>,
    /// Sum of squared deviations from the running mean (Welford's M2).
    m2: Vec<f64>,
    count: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], m2: vec![0.0; dim], count: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn update(&mut self, obs: &[f64]) {
        assert_eq!(obs.len(), self.mean.len(), "normalizer dimension mismatch");
        self.count += 1.0;
        for i in 0..obs.len() {
            let delta = obs[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            let delta2 = obs[i] - self.mean[i];
            self.m2[i] += delta * delta2;
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2[i] / self.count).sqrt().max(1e-6)
        }
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        assert_eq!(obs.len(), self.mean.len(), "normalizer dimension mismatch");
        (0..obs.len()).map(|i| (obs[i] - self.mean[i]) / self.std(i)).collect()
    }

    pub fn mean_vec(&self) -> &[f64] {
        &self.mean
    }

    pub fn raw_parts(&self) -> (Vec<f64>, Vec<f64>, f64) {
        (self.mean.clone(), self.m2.clone(), self.count)
    }

    pub fn from_raw_parts(mean: Vec<f64>, m2: Vec<f64>, count: f64) -> Self {
        assert_eq!(mean.len(), m2.len());
        Self { mean, m2, count }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass_statistics() {
        let data = [[1.0, -2.0], [3.0, 0.5], [-1.0, 4.0], [2.0, 2.5]];
        let mut n = ObsNormalizer::new(2);
        for row in &data {
            n.update(row);
        }
        for d in 0..2 {
            let mean: f64 = data.iter().map(|r| r[d]).sum::<f64>() / 4.0;
            let var: f64 = data.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / 4.0;
            assert!((n.mean_vec()[d] - mean).abs() < 1e-12);
            assert!((n.std(d) - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn fresh_normalizer_is_identity() {
        let n = ObsNormalizer::new(3);
        let x = [0.5, -1.0, 2.0];
        assert_eq!(n.normalize(&x), x.to_vec());
    }
}
