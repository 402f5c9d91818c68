//! Per-cell evaluation metrics and the drop/rise conventions: reward and
//! velocity changes are multiplicative percentages against the no-attack
//! baseline, fall-rate changes are additive percentage points.

use serde::{Deserialize, Serialize};

/// Mean and (sample) standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

pub fn mean_sd(xs: &[f64]) -> Stat {
    if xs.is_empty() {
        return Stat { mean: 0.0, sd: 0.0 };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Stat { mean, sd }
}

/// Multiplicative drop `(1 - raw/baseline)·100`, defined only for positive
/// baselines.
pub fn drop_pct(raw: f64, baseline: f64) -> Option<f64> {
    if baseline > 0.0 {
        Some((1.0 - raw / baseline) * 100.0)
    } else {
        None
    }
}

/// Additive rise in percentage points.
pub fn rise_pp(raw: f64, baseline: f64) -> f64 {
    raw - baseline
}

/// One row of the benchmark table: per-episode-batch statistics plus the
/// drops against the no-attack baseline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    /// Iteration count for multi-step methods; `None` renders as "-".
    pub steps: Option<u32>,
    pub reward: Stat,
    pub velocity: Stat,
    pub fall_rate: Stat,
    pub reward_drop_pct: Option<f64>,
    pub velocity_drop_pct: Option<f64>,
    pub fall_rise_pp: Option<f64>,
}

impl MetricsRow {
    pub fn new(method: impl Into<String>, steps: Option<u32>, reward: Stat, velocity: Stat, fall_rate: Stat) -> Self {
        Self {
            method: method.into(),
            steps,
            reward,
            velocity,
            fall_rate,
            reward_drop_pct: None,
            velocity_drop_pct: None,
            fall_rise_pp: None,
        }
    }

    /// Fills the drop/rise columns against a baseline row.
    pub fn apply_baseline(&mut self, baseline: &MetricsRow) {
        self.reward_drop_pct = drop_pct(self.reward.mean, baseline.reward.mean);
        self.velocity_drop_pct = drop_pct(self.velocity.mean, baseline.velocity.mean);
        self.fall_rise_pp = Some(rise_pp(self.fall_rate.mean, baseline.fall_rate.mean));
    }

    /// Checks the drop/rise invariants against the row's own raw values.
    pub fn invariants_hold(&self, baseline: &MetricsRow, tol: f64) -> bool {
        let reward_ok = match (self.reward_drop_pct, drop_pct(self.reward.mean, baseline.reward.mean)) {
            (Some(a), Some(b)) => (a - b).abs() < tol,
            (None, None) => true,
            _ => false,
        };
        let vel_ok = match (self.velocity_drop_pct, drop_pct(self.velocity.mean, baseline.velocity.mean)) {
            (Some(a), Some(b)) => (a - b).abs() < tol,
            (None, None) => true,
            _ => false,
        };
        let fall_ok = match self.fall_rise_pp {
            Some(a) => (a - rise_pp(self.fall_rate.mean, baseline.fall_rate.mean)).abs() < tol,
            None => false,
        };
        reward_ok && vel_ok && fall_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference triples with known-consistent printed drops.
    #[test]
    fn reward_drop_reference_triple() {
        let d = drop_pct(0.819, 0.941).unwrap();
        assert!((d - 12.965).abs() < 1e-3, "got {d}");
    }

    #[test]
    fn velocity_drop_reference_triple() {
        let d = drop_pct(3.596, 3.777).unwrap();
        assert!((d - 4.792).abs() < 1e-3, "got {d}");
    }

    #[test]
    fn fall_rise_reference_triple() {
        let r = rise_pp(1.420, 0.464);
        assert!((r - 0.956).abs() < 1e-3, "got {r}");
    }

    #[test]
    fn second_reward_reference_triple() {
        // A second consistent pair from the same table family.
        let d = drop_pct(0.622, 0.941).unwrap();
        assert!((d - 33.900).abs() < 1e-2, "got {d}");
    }

    #[test]
    fn drop_undefined_for_nonpositive_baseline() {
        assert!(drop_pct(0.5, 0.0).is_none());
        assert!(drop_pct(0.5, -1.0).is_none());
    }

    #[test]
    fn baseline_against_itself_is_all_zero() {
        let base = MetricsRow::new(
            "No Attack",
            None,
            Stat { mean: 0.941, sd: 0.01 },
            Stat { mean: 3.777, sd: 0.011 },
            Stat { mean: 0.464, sd: 0.018 },
        );
        let mut row = base.clone();
        row.apply_baseline(&base);
        assert_eq!(row.reward_drop_pct, Some(0.0));
        assert_eq!(row.velocity_drop_pct, Some(0.0));
        assert_eq!(row.fall_rise_pp, Some(0.0));
        assert!(row.invariants_hold(&base, 1e-9));
    }

    #[test]
    fn mean_sd_basics() {
        let s = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s.mean - 2.5).abs() < 1e-12);
        let expected_sd = (5.0_f64 / 3.0).sqrt();
        assert!((s.sd - expected_sd).abs() < 1e-12);
        assert_eq!(mean_sd(&[7.0]).sd, 0.0);
    }
}
