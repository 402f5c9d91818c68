//! Desk-scale environments: an exact tabular MDP (for the bound checks), a
//! continuous hazard-navigation task, and a fall-prone balancer whose reward
//! mirrors the torque-penalty + clamped-forward-velocity shape used for the
//! locomotion victims.

pub mod balancer;
pub mod point_goal;
pub mod tabular;

use thiserror::Error;

pub use balancer::{BalancerConfig, BalancerEnv};
pub use point_goal::{PointGoalConfig, PointGoalEnv};

use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on terminal episode")]
    StepAfterTerminal,
    #[error("action dimension {got} does not match environment ({want})")]
    ActionDim { got: usize, want: usize },
}

/// Per-step info used by the metrics layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepInfo {
    /// Catastrophic failure this step (fall / hazard contact).
    pub fell: bool,
    /// Forward-velocity reading for the metrics (env-specific meaning).
    pub velocity: f64,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub info: StepInfo,
}

/// A continuous-control environment with raw (unnormalized) observations.
pub trait Env: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<StepResult, EnvError>;
}

/// Victim reward: torque penalty plus clamped forward-velocity incentive,
/// `ζ·Στᵢ² + κ·min(v_x, 4.0)` with ζ = -4e-5 and κ = 0.3.
pub fn reward_victim(torques: &[f64], v_x: f64) -> f64 {
    reward_victim_with(torques, v_x, -4e-5, 0.3)
}

pub fn reward_victim_with(torques: &[f64], v_x: f64, zeta: f64, kappa: f64) -> f64 {
    let torque_sq: f64 = torques.iter().map(|t| t * t).sum();
    zeta * torque_sq + kappa * v_x.min(4.0)
}

/// Adversary reward is exactly the negated victim reward.
pub fn reward_adversary(r_vic: f64) -> f64 {
    -r_vic
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn victim_reward_examples() {
        assert_eq!(reward_victim(&[0.0; 4], 4.0), 1.2);
        assert_eq!(reward_victim(&[0.0; 4], 10.0), 1.2); // velocity clamp
        let r = reward_victim(&[5.0; 4], 0.0);
        assert!((r - (-4e-5 * 100.0)).abs() < 1e-15);
        assert!((r + 0.004).abs() < 1e-15);
    }

    #[test]
    fn adversary_reward_is_negation() {
        assert_eq!(reward_adversary(1.2), -1.2);
        assert_eq!(reward_adversary(0.0), 0.0);
        assert_eq!(reward_adversary(-0.004), 0.004);
    }
}
