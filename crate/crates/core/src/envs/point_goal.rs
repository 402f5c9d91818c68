//! Hazard-navigation task: a planar point mass accelerates toward a goal
//! while avoiding circular hazards. Observation: [position, velocity,
//! goal_delta, hazard_deltas...], all in meters / meters-per-second.

use rand::Rng as _;

use crate::envs::{Env, EnvError, StepInfo, StepResult};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct PointGoalConfig {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub hazards: Vec<[f64; 2]>,
    pub hazard_radius: f64,
    pub goal_radius: f64,
    pub dt: f64,
    pub max_steps: usize,
    /// Reset jitter scale on position and velocity.
    pub jitter: f64,
    pub max_speed: f64,
    pub drag: f64,
}

impl Default for PointGoalConfig {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0],
            goal: [3.0, 0.0],
            hazards: vec![[1.2, 0.45], [2.0, -0.45]],
            hazard_radius: 0.4,
            goal_radius: 0.3,
            dt: 0.05,
            max_steps: 400,
            jitter: 0.01,
            max_speed: 3.0,
            drag: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointGoalEnv {
    cfg: PointGoalConfig,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
    terminal: bool,
}

impl PointGoalEnv {
    pub fn new(cfg: PointGoalConfig) -> Self {
        Self { cfg, pos: [0.0; 2], vel: [0.0; 2], steps: 0, terminal: true }
    }

    pub fn config(&self) -> &PointGoalConfig {
        &self.cfg
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend_from_slice(&self.pos);
        obs.extend_from_slice(&self.vel);
        obs.push(self.cfg.goal[0] - self.pos[0]);
        obs.push(self.cfg.goal[1] - self.pos[1]);
        for h in &self.cfg.hazards {
            obs.push(h[0] - self.pos[0]);
            obs.push(h[1] - self.pos[1]);
        }
        obs
    }

    fn goal_dist(&self) -> f64 {
        let dx = self.cfg.goal[0] - self.pos[0];
        let dy = self.cfg.goal[1] - self.pos[1];
        (dx * dx + dy * dy).sqrt()
    }
}

impl Env for PointGoalEnv {
    fn obs_dim(&self) -> usize {
        6 + 2 * self.cfg.hazards.len()
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.pos = self.cfg.start;
        self.vel = [0.0, 0.0];
        if self.cfg.jitter > 0.0 {
            for v in self.pos.iter_mut().chain(self.vel.iter_mut()) {
                *v += rng.random_range(-self.cfg.jitter..=self.cfg.jitter);
            }
        }
        self.steps = 0;
        self.terminal = false;
        self.observe()
    }

    fn step(&mut self, action: &[f64], _rng: &mut Rng) -> Result<StepResult, EnvError> {
        if self.terminal {
            return Err(EnvError::StepAfterTerminal);
        }
        if action.len() != 2 {
            return Err(EnvError::ActionDim { got: action.len(), want: 2 });
        }
        let dist_prev = self.goal_dist();
        let dt = self.cfg.dt;
        // Semi-implicit Euler with linear drag; acceleration clamped to [-1,1].
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            self.vel[i] = (self.vel[i] + a * dt) * (1.0 - self.cfg.drag * dt);
            self.vel[i] = self.vel[i].clamp(-self.cfg.max_speed, self.cfg.max_speed);
        }
        for i in 0..2 {
            self.pos[i] += self.vel[i] * dt;
        }
        self.steps += 1;

        let dist_now = self.goal_dist();
        let progress = dist_prev - dist_now;
        let mut reward = progress;
        let mut fell = false;
        let mut terminal = false;

        for h in &self.cfg.hazards {
            let dx = h[0] - self.pos[0];
            let dy = h[1] - self.pos[1];
            if (dx * dx + dy * dy).sqrt() < self.cfg.hazard_radius {
                reward -= 0.5;
                fell = true;
                terminal = true;
                break;
            }
        }
        if !terminal && dist_now < self.cfg.goal_radius {
            reward += 5.0;
            terminal = true;
        }
        if self.steps >= self.cfg.max_steps {
            terminal = true;
        }
        self.terminal = terminal;

        // Forward velocity reading: speed toward the goal.
        let velocity = progress / dt;
        Ok(StepResult {
            next_state: self.observe(),
            reward,
            terminal,
            info: StepInfo { fell, velocity },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;

    #[test]
    fn zero_jitter_reset_is_nominal() {
        let mut env = PointGoalEnv::new(PointGoalConfig { jitter: 0.0, ..Default::default() });
        let obs = env.reset(&mut seed_rng(0));
        assert_eq!(&obs[0..4], &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&obs[4..6], &[3.0, 0.0]); // goal delta at start
    }

    #[test]
    fn reset_is_seed_deterministic() {
        let mut env = PointGoalEnv::new(PointGoalConfig::default());
        let a = env.reset(&mut seed_rng(9));
        let b = env.reset(&mut seed_rng(9));
        assert_eq!(a, b);
    }

    #[test]
    fn goal_delta_norm_equals_start_goal_distance() {
        let mut env = PointGoalEnv::new(PointGoalConfig { jitter: 0.0, ..Default::default() });
        let obs = env.reset(&mut seed_rng(0));
        let d = (obs[4] * obs[4] + obs[5] * obs[5]).sqrt();
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_action_at_rest_stays_put() {
        let mut env = PointGoalEnv::new(PointGoalConfig { jitter: 0.0, ..Default::default() });
        let mut rng = seed_rng(0);
        env.reset(&mut rng);
        let res = env.step(&[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(&res.next_state[0..2], &[0.0, 0.0]);
        assert_eq!(res.reward, 0.0);
    }

    #[test]
    fn step_after_terminal_errors() {
        let mut env = PointGoalEnv::new(PointGoalConfig {
            jitter: 0.0,
            max_steps: 1,
            ..Default::default()
        });
        let mut rng = seed_rng(0);
        env.reset(&mut rng);
        let res = env.step(&[1.0, 0.0], &mut rng).unwrap();
        assert!(res.terminal);
        assert!(matches!(env.step(&[0.0, 0.0], &mut rng), Err(EnvError::StepAfterTerminal)));
    }

    #[test]
    fn driving_toward_goal_reaches_it() {
        let mut env = PointGoalEnv::new(PointGoalConfig { jitter: 0.0, ..Default::default() });
        let mut rng = seed_rng(0);
        let mut obs = env.reset(&mut rng);
        let mut total = 0.0;
        for _ in 0..400 {
            // steer along the goal delta, which avoids hazards by symmetry here
            let gd = [obs[4], obs[5]];
            let n = (gd[0] * gd[0] + gd[1] * gd[1]).sqrt().max(1e-9);
            let res = env.step(&[gd[0] / n, gd[1] / n], &mut rng).unwrap();
            total += res.reward;
            obs = res.next_state;
            if res.terminal {
                assert!(!res.info.fell, "straight path should not hit hazards");
                break;
            }
        }
        assert!(total > 5.0, "goal bonus plus progress expected, got {total}");
    }

    #[test]
    fn trajectories_are_bit_reproducible() {
        let actions = [[0.5, -0.2], [1.0, 1.0], [-0.3, 0.8], [0.0, -1.0]];
        let run = || {
            let mut env = PointGoalEnv::new(PointGoalConfig::default());
            let mut rng = seed_rng(42);
            let mut out = vec![env.reset(&mut rng)];
            for a in &actions {
                out.push(env.step(a, &mut rng).unwrap().next_state);
            }
            out
        };
        assert_eq!(run(), run());
    }
}
