//! Exact finite MDPs: validated transition/reward tables, a Dirichlet
//! fuzzer, and a small hazard gridworld generator.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use crate::rng::Rng;
use crate::scalar::Real;

/// Finite MDP `⟨S, A, R, P, γ⟩` with an explicit start distribution.
/// `p[s][a][s']` are transition probabilities, `r[s][a]` rewards.
#[derive(Clone, Debug)]
pub struct TabularMdpBase<F> {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<Vec<Vec<F>>>,
    pub r: Vec<Vec<F>>,
    pub gamma: F,
    pub s0: Vec<F>,
}

impl<F: Real> TabularMdpBase<F> {
    pub fn new(
        p: Vec<Vec<Vec<F>>>,
        r: Vec<Vec<F>>,
        gamma: F,
        s0: Vec<F>,
    ) -> Result<Self, String> {
        let n_states = p.len();
        if n_states == 0 {
            return Err("MDP needs at least one state".into());
        }
        let n_actions = p[0].len();
        if n_actions == 0 {
            return Err("MDP needs at least one action".into());
        }
        let mdp = Self { n_states, n_actions, p, r, gamma, s0 };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<(), String> {
        let tol = F::c(1e-12);
        if !(self.gamma >= F::zero() && self.gamma < F::one()) {
            return Err(format!("gamma must be in [0,1), got {}", self.gamma));
        }
        if self.s0.len() != self.n_states {
            return Err("start distribution length mismatch".into());
        }
        let s0_sum = self.s0.iter().fold(F::zero(), |a, &b| a + b);
        if (s0_sum - F::one()).abs() > tol {
            return Err(format!("start distribution sums to {s0_sum}"));
        }
        for (s, row) in self.p.iter().enumerate() {
            if row.len() != self.n_actions || self.r[s].len() != self.n_actions {
                return Err(format!("state {s}: ragged action table"));
            }
            for (a, dist) in row.iter().enumerate() {
                if dist.len() != self.n_states {
                    return Err(format!("({s},{a}): ragged transition row"));
                }
                let sum = dist.iter().fold(F::zero(), |x, &y| x + y);
                if (sum - F::one()).abs() > tol {
                    return Err(format!("({s},{a}): transitions sum to {sum}"));
                }
                if dist.iter().any(|&v| v < F::zero()) {
                    return Err(format!("({s},{a}): negative transition probability"));
                }
            }
        }
        Ok(())
    }

    pub fn min_reward(&self) -> F {
        self.r.iter().flatten().fold(F::infinity(), |a, &b| a.min(b))
    }

    pub fn max_abs_reward(&self) -> F {
        self.r.iter().flatten().fold(F::zero(), |a, &b| a.max(b.abs()))
    }
}

impl TabularMdpBase<f64> {
    /// Random MDP: transition rows and start distribution are Dirichlet(1),
    /// rewards uniform in [-1, 1].
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, rng: &mut Rng) -> Self {
        let p = (0..n_states)
            .map(|_| (0..n_actions).map(|_| dirichlet_row(n_states, rng)).collect())
            .collect();
        let r = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let s0 = dirichlet_row(n_states, rng);
        Self::new(p, r, gamma, s0).expect("random MDP is valid by construction")
    }

    /// Sample a next state from `P[s][a]`.
    pub fn sample_next(&self, s: usize, a: usize, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (sp, &pr) in self.p[s][a].iter().enumerate() {
            acc += pr;
            if u < acc {
                return sp;
            }
        }
        self.n_states - 1
    }

    pub fn sample_start(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (s, &pr) in self.s0.iter().enumerate() {
            acc += pr;
            if u < acc {
                return s;
            }
        }
        self.n_states - 1
    }
}

/// Dirichlet(1) sample via normalized Exp(1) draws.
fn dirichlet_row(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).map(|v: f64| v.max(1e-12)).collect();
    let sum: f64 = row.iter().sum();
    for v in &mut row {
        *v /= sum;
    }
    row
}

/// Hazard gridworld on a `width × height` grid: 4 move actions with a slip
/// probability, hazards are absorbing with reward -1, the goal is absorbing
/// with reward +1, every other move costs -0.01. Start is the top-left cell.
pub fn hazard_gridworld(
    width: usize,
    height: usize,
    hazards: &[(usize, usize)],
    goal: (usize, usize),
    slip: f64,
    gamma: f64,
) -> TabularMdpBase<f64> {
    let n = width * height;
    let idx = |x: usize, y: usize| y * width + x;
    let mut p = vec![vec![vec![0.0; n]; 4]; n];
    let mut r = vec![vec![0.0; 4]; n];
    let is_hazard = |s: usize| hazards.iter().any(|&(x, y)| idx(x, y) == s);
    let goal_idx = idx(goal.0, goal.1);

    for y in 0..height {
        for x in 0..width {
            let s = idx(x, y);
            for a in 0..4 {
                if s == goal_idx || is_hazard(s) {
                    // absorbing
                    p[s][a][s] = 1.0;
                    r[s][a] = 0.0;
                    continue;
                }
                // intended move with prob 1-slip, otherwise stay
                let (dx, dy): (isize, isize) = match a {
                    0 => (1, 0),
                    1 => (-1, 0),
                    2 => (0, 1),
                    _ => (0, -1),
                };
                let nx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                let ny = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                let target = idx(nx, ny);
                p[s][a][target] += 1.0 - slip;
                p[s][a][s] += slip;
                r[s][a] = if target == goal_idx {
                    1.0
                } else if is_hazard(target) {
                    -1.0
                } else {
                    -0.01
                };
            }
        }
    }
    let mut s0 = vec![0.0; n];
    s0[0] = 1.0;
    TabularMdpBase::new(p, r, gamma, s0).expect("gridworld tables are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;

    #[test]
    fn single_state_self_loop() {
        let mdp = TabularMdpBase::new(
            vec![vec![vec![1.0]]],
            vec![vec![1.0]],
            0.5,
            vec![1.0],
        )
        .unwrap();
        let mut rng = seed_rng(0);
        assert_eq!(mdp.sample_next(0, 0, &mut rng), 0);
    }

    #[test]
    fn random_mdps_have_stochastic_rows() {
        let mut rng = seed_rng(1);
        for _ in 0..50 {
            let ns = rng.random_range(1..=6);
            let na = rng.random_range(1..=3);
            let mdp = TabularMdpBase::random(ns, na, 0.9, &mut rng);
            mdp.validate().unwrap();
            assert!(mdp.r.iter().flatten().all(|&v| (-1.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn invalid_rows_are_rejected() {
        let bad = TabularMdpBase::new(
            vec![vec![vec![0.5, 0.4]], vec![vec![1.0, 0.0]]],
            vec![vec![0.0], vec![0.0]],
            0.9,
            vec![1.0, 0.0],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn gridworld_is_valid_and_absorbing() {
        let mdp = hazard_gridworld(3, 3, &[(1, 1)], (2, 2), 0.1, 0.9);
        mdp.validate().unwrap();
        let goal = 2 * 3 + 2;
        for a in 0..4 {
            assert_eq!(mdp.p[goal][a][goal], 1.0);
        }
        assert!(mdp.min_reward() < 0.0);
    }
}
