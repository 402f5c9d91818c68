//! Fall-prone balancer: a linearized inverted-pendulum cart driven by four
//! redundant actuators. The torque sum produces thrust (forward velocity),
//! the front/rear asymmetry produces a tilt moment, and the upright pose is
//! unstable, so the policy must actively balance while driving forward.
//!
//! State (11 dims): [tilt θ (rad), tilt rate (rad/s), forward velocity v_x
//! (m/s), actuator outputs p₁..p₄ (rad), actuator rates r₁..r₄ (rad/s)].
//! Action (4 dims): commanded torques, clamped. A fall is |θ| > 0.8 rad.

use rand::Rng as _;

use crate::envs::{reward_victim_with, Env, EnvError, StepInfo, StepResult};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct BalancerConfig {
    /// Control interval, seconds.
    pub dt: f64,
    pub max_steps: usize,
    /// Reset jitter on tilt and tilt rate.
    pub jitter: f64,
    pub torque_limit: f64,
    /// Gravity-like destabilizing coefficient in θ̈ = tilt_accel·sin θ + ...
    pub tilt_accel: f64,
    pub tilt_damping: f64,
    /// Moment per unit of front/rear actuator asymmetry.
    pub tilt_gain: f64,
    /// First-order actuator lag time constant, seconds.
    pub actuator_lag: f64,
    pub thrust_gain: f64,
    pub velocity_damping: f64,
    pub max_velocity: f64,
    pub fall_angle: f64,
    /// Victim reward coefficients.
    pub zeta: f64,
    pub kappa: f64,
}

impl Default for BalancerConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            max_steps: 400,
            jitter: 0.01,
            torque_limit: 3.0,
            tilt_accel: 20.0,
            tilt_damping: 0.3,
            tilt_gain: 8.0,
            actuator_lag: 0.05,
            thrust_gain: 1.0,
            velocity_damping: 1.0,
            max_velocity: 6.0,
            fall_angle: 0.8,
            zeta: -4e-5,
            kappa: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BalancerEnv {
    cfg: BalancerConfig,
    tilt: f64,
    tilt_rate: f64,
    vel: f64,
    act_pos: [f64; 4],
    act_rate: [f64; 4],
    steps: usize,
    terminal: bool,
}

impl BalancerEnv {
    pub fn new(cfg: BalancerConfig) -> Self {
        Self {
            cfg,
            tilt: 0.0,
            tilt_rate: 0.0,
            vel: 0.0,
            act_pos: [0.0; 4],
            act_rate: [0.0; 4],
            steps: 0,
            terminal: true,
        }
    }

    pub fn config(&self) -> &BalancerConfig {
        &self.cfg
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(11);
        obs.push(self.tilt);
        obs.push(self.tilt_rate);
        obs.push(self.vel);
        obs.extend_from_slice(&self.act_pos);
        obs.extend_from_slice(&self.act_rate);
        obs
    }
}

impl Env for BalancerEnv {
    fn obs_dim(&self) -> usize {
        11
    }

    fn action_dim(&self) -> usize {
        4
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.tilt = 0.0;
        self.tilt_rate = 0.0;
        self.vel = 0.0;
        self.act_pos = [0.0; 4];
        self.act_rate = [0.0; 4];
        if self.cfg.jitter > 0.0 {
            self.tilt = rng.random_range(-self.cfg.jitter..=self.cfg.jitter);
            self.tilt_rate = rng.random_range(-self.cfg.jitter..=self.cfg.jitter);
        }
        self.steps = 0;
        self.terminal = false;
        self.observe()
    }

    fn step(&mut self, action: &[f64], _rng: &mut Rng) -> Result<StepResult, EnvError> {
        if self.terminal {
            return Err(EnvError::StepAfterTerminal);
        }
        if action.len() != 4 {
            return Err(EnvError::ActionDim { got: action.len(), want: 4 });
        }
        let cfg = &self.cfg;
        let dt = cfg.dt;
        let torques: Vec<f64> =
            action.iter().map(|t| t.clamp(-cfg.torque_limit, cfg.torque_limit)).collect();

        // Actuators: first-order lag toward the commanded torque.
        for i in 0..4 {
            self.act_rate[i] = (torques[i] - self.act_pos[i]) / cfg.actuator_lag;
            self.act_pos[i] += self.act_rate[i] * dt;
        }

        // Thrust channel (semi-implicit Euler).
        let thrust: f64 = self.act_pos.iter().sum();
        let v_dot = cfg.thrust_gain * thrust - cfg.velocity_damping * self.vel;
        self.vel = (self.vel + v_dot * dt).clamp(-cfg.max_velocity, cfg.max_velocity);

        // Tilt channel: unstable upright plus actuator moment.
        let tilt_input = self.act_pos[0] + self.act_pos[1] - self.act_pos[2] - self.act_pos[3];
        let tilt_acc = cfg.tilt_accel * self.tilt.sin() + cfg.tilt_gain * tilt_input
            - cfg.tilt_damping * self.tilt_rate;
        self.tilt_rate += tilt_acc * dt;
        self.tilt += self.tilt_rate * dt;

        self.steps += 1;
        let fell = self.tilt.abs() > cfg.fall_angle;
        let terminal = fell || self.steps >= cfg.max_steps;
        self.terminal = terminal;

        let mut reward = reward_victim_with(&torques, self.vel, cfg.zeta, cfg.kappa);
        if fell {
            reward -= 1.0;
        }
        Ok(StepResult {
            next_state: self.observe(),
            reward,
            terminal,
            info: StepInfo { fell, velocity: self.vel },
        })
    }
}

/// Hand-written PD stabilizer used as a sanity floor in tests: front/rear
/// torque asymmetry cancels tilt, a small symmetric bias drives forward.
pub fn pd_action(obs: &[f64], kp: f64, kd: f64, cruise: f64) -> Vec<f64> {
    let u = -kp * obs[0] - kd * obs[1];
    vec![cruise + 0.5 * u, cruise + 0.5 * u, cruise - 0.5 * u, cruise - 0.5 * u]
}
