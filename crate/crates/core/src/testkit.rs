//! Independent oracles for tests and the acceptance suite. These deliberately
//! avoid the solver/recursion code paths they are used to validate: values by
//! truncated power iteration, visitation by geometric-horizon sampling, and
//! returns by direct discounted summation.

use rand::Rng as _;

use crate::rng::Rng;
use crate::{PolicyTable, TabularMdp};

/// Truncated power iteration `V ← R_π + γ·P_π·V` until the sup-norm change
/// drops below `tol` (or `max_iters`).
pub fn power_iteration_values(
    mdp: &TabularMdp,
    pi: &PolicyTable,
    max_iters: usize,
    tol: f64,
) -> Vec<f64> {
    let n = mdp.n_states;
    let mut r_pi = vec![0.0; n];
    let mut p_pi = vec![vec![0.0; n]; n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = pi.probs[s][a];
            r_pi[s] += w * mdp.r[s][a];
            for sp in 0..n {
                p_pi[s][sp] += w * mdp.p[s][a][sp];
            }
        }
    }
    let mut v = vec![0.0; n];
    for _ in 0..max_iters {
        let mut next = r_pi.clone();
        for s in 0..n {
            for sp in 0..n {
                next[s] += mdp.gamma * p_pi[s][sp] * v[sp];
            }
        }
        let change = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        v = next;
        if change < tol {
            break;
        }
    }
    v
}

/// Monte-Carlo estimate of the discounted visitation distribution: per
/// sample, walk the chain and stop at a geometric horizon (prob `1-γ` per
/// step), recording the stopping state.
pub fn monte_carlo_visitation(
    mdp: &TabularMdp,
    pi: &PolicyTable,
    samples: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    let mut counts = vec![0.0; mdp.n_states];
    for _ in 0..samples {
        let mut s = mdp.sample_start(rng);
        loop {
            if rng.random::<f64>() < 1.0 - mdp.gamma {
                counts[s] += 1.0;
                break;
            }
            let a = pi.sample_action(s, rng);
            s = mdp.sample_next(s, a, rng);
        }
    }
    for c in &mut counts {
        *c /= samples as f64;
    }
    counts
}

/// Direct Monte-Carlo style discounted returns from a recorded reward
/// sequence: `R̂_t = Σ_k γ^k·r_{t+k} + γ^{T-t}·bootstrap`.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let t_len = rewards.len();
    let mut out = vec![0.0; t_len];
    for t in 0..t_len {
        let mut acc = 0.0;
        let mut disc = 1.0;
        for r in &rewards[t..] {
            acc += disc * r;
            disc *= gamma;
        }
        out[t] = acc + disc * bootstrap;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discounted_returns_closed_form() {
        // rewards (1, 1), γ = 0.5, no bootstrap: R̂₀ = 1.5, R̂₁ = 1.
        let r = discounted_returns(&[1.0, 1.0], 0.5, 0.0);
        assert_eq!(r, vec![1.5, 1.0]);
        // bootstrap enters with γ^{T-t}
        let rb = discounted_returns(&[1.0], 0.5, 2.0);
        assert_eq!(rb, vec![1.0 + 0.5 * 2.0]);
    }
}
