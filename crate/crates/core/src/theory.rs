//! Exact verification on finite MDPs: value functions via dense linear
//! solves, discounted visitation, total-variation distances, two-sided
//! performance-difference bounds, and the necessary/sufficient attack-success
//! condition checks.
//!
//! Everything here is a pure function of validated tables, computed at the
//! scalar type's full precision; inequality checks use an absolute tolerance
//! of 1e-9.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;
use thiserror::Error;

use crate::envs::tabular::TabularMdpBase;
use crate::rng::Rng;
use crate::scalar::Real;

/// Absolute tolerance for inequality checks.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("linear system is singular (gamma too close to 1?)")]
    Singular,
    #[error("solver residual {residual} exceeds tolerance")]
    Residual { residual: f64 },
    #[error("{0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Stochastic policy over a finite MDP: `probs[s][a]`, rows sum to one.
#[derive(Clone, Debug)]
pub struct PolicyTableBase<F> {
    pub probs: Vec<Vec<F>>,
}

impl<F: Real> PolicyTableBase<F> {
    pub fn new(probs: Vec<Vec<F>>) -> Result<Self, TheoryError> {
        let t = Self { probs };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let tol = F::c(1e-12).max(F::epsilon() * F::c(16.0));
        for (s, row) in self.probs.iter().enumerate() {
            let sum = row.iter().fold(F::zero(), |a, &b| a + b);
            if (sum - F::one()).abs() > tol {
                return Err(TheoryError::Shape(format!("policy row {s} sums to {sum}")));
            }
            if row.iter().any(|&v| v < F::zero()) {
                return Err(TheoryError::Shape(format!("policy row {s} has negative mass")));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }
}

impl PolicyTableBase<f64> {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }

    /// Dirichlet(1) policy rows.
    pub fn random(n_states: usize, n_actions: usize, rng: &mut Rng) -> Self {
        let probs = (0..n_states)
            .map(|_| {
                let mut row: Vec<f64> = (0..n_actions).map(|_| Exp1.sample(rng)).collect();
                let sum: f64 = row.iter().sum();
                for v in &mut row {
                    *v /= sum.max(1e-300);
                }
                row
            })
            .collect();
        Self { probs }
    }

    /// A nearby policy: rows mixed with Dirichlet noise at `scale` in [0,1].
    pub fn perturbed(&self, scale: f64, rng: &mut Rng) -> Self {
        let noise = Self::random(self.n_states(), self.n_actions(), rng);
        let probs = self
            .probs
            .iter()
            .zip(&noise.probs)
            .map(|(base, noi)| {
                base.iter().zip(noi).map(|(&b, &n)| (1.0 - scale) * b + scale * n).collect()
            })
            .collect();
        Self { probs }
    }

    pub fn sample_action(&self, s: usize, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &pr) in self.probs[s].iter().enumerate() {
            acc += pr;
            if u < acc {
                return a;
            }
        }
        self.probs[s].len() - 1
    }
}

/// Attacked policy `μ⊕ν(·|s) = μ(·|obs_map[s])`: the victim acts as if it were
/// in the state its perturbed observation points to.
pub fn attacked_from_observation_map<F: Real>(
    mu: &PolicyTableBase<F>,
    obs_map: &[usize],
) -> Result<PolicyTableBase<F>, TheoryError> {
    if obs_map.len() != mu.n_states() {
        return Err(TheoryError::Shape("observation map length mismatch".into()));
    }
    let probs = obs_map
        .iter()
        .map(|&sp| {
            mu.probs
                .get(sp)
                .cloned()
                .ok_or_else(|| TheoryError::Shape(format!("observation map target {sp} out of range")))
        })
        .collect::<Result<_, _>>()?;
    Ok(PolicyTableBase { probs })
}

/// `P_π[s][s'] = Σ_a π(a|s)·P[s][a][s']`.
fn policy_transition<F: Real>(mdp: &TabularMdpBase<F>, pi: &PolicyTableBase<F>) -> Vec<Vec<F>> {
    let n = mdp.n_states;
    let mut out = vec![vec![F::zero(); n]; n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = pi.probs[s][a];
            for sp in 0..n {
                out[s][sp] = out[s][sp] + w * mdp.p[s][a][sp];
            }
        }
    }
    out
}

/// `R_π[s] = Σ_a π(a|s)·R[s][a]`.
fn policy_reward<F: Real>(mdp: &TabularMdpBase<F>, pi: &PolicyTableBase<F>) -> Vec<F> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions).fold(F::zero(), |acc, a| acc + pi.probs[s][a] * mdp.r[s][a])
        })
        .collect()
}

/// Dense Gaussian elimination with partial pivoting.
fn solve_dense<F: Real>(mut a: Vec<Vec<F>>, mut b: Vec<F>) -> Result<Vec<F>, TheoryError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < F::c(1e-300) {
            return Err(TheoryError::Singular);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == F::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] = a[row][k] - factor * v;
            }
            let bv = b[col];
            b[row] = b[row] - factor * bv;
        }
    }
    let mut x = vec![F::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc = acc - a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

fn residual_tol<F: Real>() -> F {
    F::c(1e-10).max(F::epsilon() * F::c(100.0))
}

/// State values under `pi`: solves `(I - γ·P_π)·V = R_π` and verifies the
/// residual is below 1e-10.
pub fn exact_values<F: Real>(
    mdp: &TabularMdpBase<F>,
    pi: &PolicyTableBase<F>,
) -> Result<Vec<F>, TheoryError> {
    let n = mdp.n_states;
    let p_pi = policy_transition(mdp, pi);
    let r_pi = policy_reward(mdp, pi);
    let mut a = vec![vec![F::zero(); n]; n];
    for s in 0..n {
        for sp in 0..n {
            a[s][sp] = -mdp.gamma * p_pi[s][sp];
        }
        a[s][s] = a[s][s] + F::one();
    }
    let v = solve_dense(a, r_pi.clone())?;
    // residual ‖(I-γP_π)V − R_π‖∞
    let mut res = F::zero();
    for s in 0..n {
        let mut lhs = v[s];
        for sp in 0..n {
            lhs = lhs - mdp.gamma * p_pi[s][sp] * v[sp];
        }
        res = res.max((lhs - r_pi[s]).abs());
    }
    if res > residual_tol::<F>() {
        return Err(TheoryError::Residual { residual: res.to_f64().unwrap_or(f64::NAN) });
    }
    Ok(v)
}

/// Start-distribution value `J(π) = Σ_s s0(s)·V^π(s)`.
pub fn start_value<F: Real>(mdp: &TabularMdpBase<F>, v: &[F]) -> F {
    mdp.s0.iter().zip(v).fold(F::zero(), |acc, (&w, &vs)| acc + w * vs)
}

/// Discounted visitation `d^π(s) = (1-γ)·Σ_k γ^k·P(s_k = s | π)`, solved from
/// `d = (1-γ)·s0 + γ·P_πᵀ·d`. The output is a probability distribution.
pub fn visitation<F: Real>(
    mdp: &TabularMdpBase<F>,
    pi: &PolicyTableBase<F>,
) -> Result<Vec<F>, TheoryError> {
    let n = mdp.n_states;
    let p_pi = policy_transition(mdp, pi);
    let mut a = vec![vec![F::zero(); n]; n];
    for s in 0..n {
        for sp in 0..n {
            // transpose: column s of P_π
            a[s][sp] = -mdp.gamma * p_pi[sp][s];
        }
        a[s][s] = a[s][s] + F::one();
    }
    let b: Vec<F> = mdp.s0.iter().map(|&v| (F::one() - mdp.gamma) * v).collect();
    let d = solve_dense(a, b)?;
    let sum = d.iter().fold(F::zero(), |x, &y| x + y);
    if (sum - F::one()).abs() > residual_tol::<F>() {
        return Err(TheoryError::Residual {
            residual: (sum - F::one()).abs().to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(d)
}

/// Per-state total variation `D_TV[s] = ½·Σ_a |p1(a|s) - p2(a|s)|`.
pub fn tv_per_state<F: Real>(p1: &PolicyTableBase<F>, p2: &PolicyTableBase<F>) -> Vec<F> {
    assert_eq!(p1.n_states(), p2.n_states(), "policy shapes differ");
    assert_eq!(p1.n_actions(), p2.n_actions(), "policy shapes differ");
    let half = F::c(0.5);
    p1.probs
        .iter()
        .zip(&p2.probs)
        .map(|(r1, r2)| {
            half * r1.iter().zip(r2).fold(F::zero(), |acc, (&a, &b)| acc + (a - b).abs())
        })
        .collect()
}

/// Two-sided performance-difference bound report.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    /// Exact `J(π') - J(π)`.
    pub lhs: f64,
    pub d_minus: f64,
    pub d_plus: f64,
    pub holds: bool,
    /// `(lhs - d_minus, d_plus - lhs)`.
    pub slack: (f64, f64),
    pub surrogate: f64,
    pub xi: f64,
}

/// Bounds `D⁻ ≤ J(π') - J(π) ≤ D⁺` with
/// `D± = L_{π,f}(π')/(1-γ) ± 2γ·ξ^{π'}_f/(1-γ)²·E_{s~d^π}[D_TV(π‖π')[s]]`,
/// where `δ_f(s,a,s') = R(s,a) + γ·f(s') - f(s)`,
/// `L` is the d^π-weighted expectation of `(π'/π - 1)·δ_f`, and
/// `ξ = max_s |E_{a~π'}[δ_f]|`. Everything is computed exactly.
pub fn cpo_bounds<F: Real>(
    mdp: &TabularMdpBase<F>,
    pi: &PolicyTableBase<F>,
    pi_prime: &PolicyTableBase<F>,
    f: &[F],
) -> Result<BoundReport, TheoryError> {
    let n = mdp.n_states;
    if f.len() != n {
        return Err(TheoryError::Shape("f must have one entry per state".into()));
    }
    let gamma = mdp.gamma;
    let d_pi = visitation(mdp, pi)?;

    // δ̄_f(s,a) = R(s,a) + γ·E_{s'}[f(s')] - f(s)
    let mut delta_f = vec![vec![F::zero(); mdp.n_actions]; n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let ef = (0..n).fold(F::zero(), |acc, sp| acc + mdp.p[s][a][sp] * f[sp]);
            delta_f[s][a] = mdp.r[s][a] + gamma * ef - f[s];
        }
    }

    // L = Σ_s d^π(s)·Σ_a (π'(a|s) - π(a|s))·δ̄_f(s,a)
    let mut surrogate = F::zero();
    for s in 0..n {
        for a in 0..mdp.n_actions {
            surrogate = surrogate
                + d_pi[s] * (pi_prime.probs[s][a] - pi.probs[s][a]) * delta_f[s][a];
        }
    }

    // ξ = max_s |Σ_a π'(a|s)·δ̄_f(s,a)|
    let mut xi = F::zero();
    for s in 0..n {
        let e = (0..mdp.n_actions)
            .fold(F::zero(), |acc, a| acc + pi_prime.probs[s][a] * delta_f[s][a]);
        xi = xi.max(e.abs());
    }

    let tv = tv_per_state(pi, pi_prime);
    let tv_mean = d_pi.iter().zip(&tv).fold(F::zero(), |acc, (&d, &t)| acc + d * t);

    let one_m_g = F::one() - gamma;
    let penalty = F::c(2.0) * gamma * xi / (one_m_g * one_m_g) * tv_mean;
    let base = surrogate / one_m_g;
    let d_minus = base - penalty;
    let d_plus = base + penalty;

    let v_pi = exact_values(mdp, pi)?;
    let v_pp = exact_values(mdp, pi_prime)?;
    let lhs = start_value(mdp, &v_pp) - start_value(mdp, &v_pi);

    let tol = F::c(CHECK_TOL);
    let holds = d_minus - tol <= lhs && lhs <= d_plus + tol;
    Ok(BoundReport {
        lhs: lhs.to_f64().unwrap_or(f64::NAN),
        d_minus: d_minus.to_f64().unwrap_or(f64::NAN),
        d_plus: d_plus.to_f64().unwrap_or(f64::NAN),
        holds,
        slack: (
            (lhs - d_minus).to_f64().unwrap_or(f64::NAN),
            (d_plus - lhs).to_f64().unwrap_or(f64::NAN),
        ),
        surrogate: surrogate.to_f64().unwrap_or(f64::NAN),
        xi: xi.to_f64().unwrap_or(f64::NAN),
    })
}

/// Necessary-condition report. `delta_literal` is the printed form of the
/// state-wise policy divergence — a sum over a difference of probability
/// distributions, identically zero — kept to surface that degeneracy.
/// `delta_reward_weighted` is the reward-weighted sum the bound chain
/// actually manipulates, oriented so that a successful attack must satisfy
/// `delta_reward_weighted ≤ rhs`:
/// `Σ_s d^{μ⊕ν}(s)·Σ_a (μ⊕ν(a|s) - μ(a|s))·R(s,a) / |R_max|`.
#[derive(Clone, Debug, Serialize)]
pub struct Theorem1Report {
    pub delta_literal: f64,
    pub delta_reward_weighted: f64,
    /// `2γ/(1-γ) · E_{s~d^{μ⊕ν}}[D_TV(μ‖μ⊕ν)[s]]`.
    pub rhs: f64,
    pub attack_succeeded: bool,
    pub condition_holds: bool,
    pub j_clean: f64,
    pub j_attacked: f64,
}

pub fn theorem1_check<F: Real>(
    mdp: &TabularMdpBase<F>,
    mu: &PolicyTableBase<F>,
    mu_nu: &PolicyTableBase<F>,
) -> Result<Theorem1Report, TheoryError> {
    let d = visitation(mdp, mu_nu)?;
    let n = mdp.n_states;

    let mut delta_literal = F::zero();
    let mut weighted = F::zero();
    for s in 0..n {
        let mut probs = F::zero();
        let mut rew = F::zero();
        for a in 0..mdp.n_actions {
            let diff = mu_nu.probs[s][a] - mu.probs[s][a];
            probs = probs + diff;
            rew = rew + diff * mdp.r[s][a];
        }
        delta_literal = delta_literal + d[s] * probs;
        weighted = weighted + d[s] * rew;
    }
    let r_max = mdp.max_abs_reward();
    let delta_rw = if r_max > F::zero() { weighted / r_max } else { F::zero() };

    let tv = tv_per_state(mu, mu_nu);
    let tv_mean = d.iter().zip(&tv).fold(F::zero(), |acc, (&w, &t)| acc + w * t);
    let rhs = F::c(2.0) * mdp.gamma / (F::one() - mdp.gamma) * tv_mean;

    let j_clean = start_value(mdp, &exact_values(mdp, mu)?);
    let j_attacked = start_value(mdp, &exact_values(mdp, mu_nu)?);
    let attack_succeeded = j_clean >= j_attacked;
    let condition_holds = delta_rw <= rhs + F::c(CHECK_TOL);

    Ok(Theorem1Report {
        delta_literal: delta_literal.to_f64().unwrap_or(f64::NAN),
        delta_reward_weighted: delta_rw.to_f64().unwrap_or(f64::NAN),
        rhs: rhs.to_f64().unwrap_or(f64::NAN),
        attack_succeeded,
        condition_holds,
        j_clean: j_clean.to_f64().unwrap_or(f64::NAN),
        j_attacked: j_attacked.to_f64().unwrap_or(f64::NAN),
    })
}

/// Sufficient-condition report. `lhs` is the reward-weighted divergence in
/// the R_min normalization the bound chain defines,
/// `Σ_s d^{μ⊕ν}(s)·Σ_a (μ⊕ν(a|s) - μ(a|s))·R(s,a) / R_min`, and
/// `rhs = κ·max_s d^{μ⊕ν}(s)·Σ_s D_TV[s]` with
/// `κ = -2γ|R_max| / ((1-γ)·R_min)`. With these readings,
/// `lhs ≥ rhs` provably implies a successful attack.
#[derive(Clone, Debug, Serialize)]
pub struct Theorem2Report {
    pub lhs: f64,
    pub kappa: f64,
    pub rhs: f64,
    /// `max_s d^{μ⊕ν}(s)` — the normalized-occupancy reading of the
    /// state-visiting probability bound.
    pub max_visitation: f64,
    pub tv_sum: f64,
    pub delta_reward_weighted: f64,
    pub sufficient_predicts: bool,
    pub attack_succeeded: bool,
}

pub fn theorem2_check<F: Real>(
    mdp: &TabularMdpBase<F>,
    mu: &PolicyTableBase<F>,
    mu_nu: &PolicyTableBase<F>,
) -> Result<Theorem2Report, TheoryError> {
    let r_min = mdp.min_reward();
    if !(r_min < F::zero()) {
        return Err(TheoryError::Precondition(
            "sufficient condition requires negative rewards (min R < 0)".into(),
        ));
    }
    let d = visitation(mdp, mu_nu)?;
    let n = mdp.n_states;

    let mut weighted = F::zero();
    for s in 0..n {
        for a in 0..mdp.n_actions {
            weighted =
                weighted + d[s] * (mu_nu.probs[s][a] - mu.probs[s][a]) * mdp.r[s][a];
        }
    }
    let r_max = mdp.max_abs_reward();
    let lhs = weighted / r_min;
    let delta_rw = if r_max > F::zero() { weighted / r_max } else { F::zero() };

    let kappa = -F::c(2.0) * mdp.gamma * r_max / ((F::one() - mdp.gamma) * r_min);
    let max_visit = d.iter().fold(F::zero(), |a: F, &b| a.max(b));
    let tv = tv_per_state(mu, mu_nu);
    let tv_sum = tv.iter().fold(F::zero(), |a, &b| a + b);
    let rhs = kappa * max_visit * tv_sum;

    let j_clean = start_value(mdp, &exact_values(mdp, mu)?);
    let j_attacked = start_value(mdp, &exact_values(mdp, mu_nu)?);

    Ok(Theorem2Report {
        lhs: lhs.to_f64().unwrap_or(f64::NAN),
        kappa: kappa.to_f64().unwrap_or(f64::NAN),
        rhs: rhs.to_f64().unwrap_or(f64::NAN),
        max_visitation: max_visit.to_f64().unwrap_or(f64::NAN),
        tv_sum: tv_sum.to_f64().unwrap_or(f64::NAN),
        delta_reward_weighted: delta_rw.to_f64().unwrap_or(f64::NAN),
        sufficient_predicts: lhs >= rhs - F::c(CHECK_TOL),
        attack_succeeded: j_clean >= j_attacked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;
    use crate::testkit;
    use crate::TabularMdp;

    fn single_state(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(vec![vec![vec![1.0]]], vec![vec![r]], gamma, vec![1.0]).unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let mdp = single_state(1.0, 0.5);
        let pi = crate::PolicyTable::uniform(1, 1);
        let v = exact_values(&mdp, &pi).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_zero_values() {
        let mut rng = seed_rng(0);
        let mut mdp = TabularMdp::random(4, 2, 0.9, &mut rng);
        for row in &mut mdp.r {
            row.fill(0.0);
        }
        let pi = crate::PolicyTable::random(4, 2, &mut rng);
        let v = exact_values(&mdp, &pi).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn values_match_power_iteration_oracle() {
        let mut rng = seed_rng(1);
        for _ in 0..20 {
            let mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
            let pi = crate::PolicyTable::random(5, 3, &mut rng);
            let v = exact_values(&mdp, &pi).unwrap();
            let oracle = testkit::power_iteration_values(&mdp, &pi, 1_000_000, 1e-12);
            for s in 0..5 {
                assert!((v[s] - oracle[s]).abs() < 1e-8, "state {s}: {} vs {}", v[s], oracle[s]);
            }
        }
    }

    #[test]
    fn visitation_single_state() {
        let mdp = single_state(0.0, 0.7);
        let pi = crate::PolicyTable::uniform(1, 1);
        let d = visitation(&mdp, &pi).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn visitation_absorbing_chain_splits_evenly() {
        // Two states, deterministic hop 0 -> 1, state 1 absorbing, γ = 0.5.
        let mdp = TabularMdp::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            vec![vec![0.0], vec![0.0]],
            0.5,
            vec![1.0, 0.0],
        )
        .unwrap();
        let pi = crate::PolicyTable::uniform(2, 1);
        let d = visitation(&mdp, &pi).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12);
        assert!((d[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn visitation_matches_monte_carlo_oracle() {
        let mut rng = seed_rng(2);
        for case in 0..5 {
            let mdp = TabularMdp::random(4, 2, 0.9, &mut rng);
            let pi = crate::PolicyTable::random(4, 2, &mut rng);
            let d = visitation(&mdp, &pi).unwrap();
            let mc = testkit::monte_carlo_visitation(&mdp, &pi, 100_000, &mut rng);
            for s in 0..4 {
                assert!((d[s] - mc[s]).abs() < 2e-2, "case {case} state {s}: {} vs {}", d[s], mc[s]);
            }
        }
    }

    #[test]
    fn tv_examples() {
        let p1 = crate::PolicyTable::new(vec![vec![0.5, 0.5]]).unwrap();
        let p2 = crate::PolicyTable::new(vec![vec![0.75, 0.25]]).unwrap();
        assert!((tv_per_state(&p1, &p2)[0] - 0.25).abs() < 1e-15);

        let d1 = crate::PolicyTable::new(vec![vec![1.0, 0.0]]).unwrap();
        let d2 = crate::PolicyTable::new(vec![vec![0.0, 1.0]]).unwrap();
        assert_eq!(tv_per_state(&d1, &d2)[0], 1.0);
        assert_eq!(tv_per_state(&d1, &d1)[0], 0.0);
    }

    #[test]
    fn tv_is_symmetric_and_triangle() {
        let mut rng = seed_rng(3);
        for _ in 0..50 {
            let a = crate::PolicyTable::random(3, 3, &mut rng);
            let b = crate::PolicyTable::random(3, 3, &mut rng);
            let c = crate::PolicyTable::random(3, 3, &mut rng);
            let ab = tv_per_state(&a, &b);
            let ba = tv_per_state(&b, &a);
            let ac = tv_per_state(&a, &c);
            let cb = tv_per_state(&c, &b);
            for s in 0..3 {
                assert!((ab[s] - ba[s]).abs() < 1e-15);
                assert!((0.0..=1.0 + 1e-15).contains(&ab[s]));
                assert!(ab[s] <= ac[s] + cb[s] + 1e-12, "triangle inequality violated");
            }
        }
    }

    #[test]
    fn cpo_identical_policies_bracket_zero() {
        let mut rng = seed_rng(4);
        let mdp = TabularMdp::random(4, 2, 0.9, &mut rng);
        let pi = crate::PolicyTable::random(4, 2, &mut rng);
        let zero_f = vec![0.0; 4];
        let rep = cpo_bounds(&mdp, &pi, &pi, &zero_f).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert!((rep.surrogate).abs() < 1e-15);
        assert!(rep.holds);
        assert!(rep.d_minus <= 0.0 && rep.d_plus >= 0.0);

        // f = V^π: ξ stays finite, the interval degenerates symmetric around 0.
        let v = exact_values(&mdp, &pi).unwrap();
        let rep2 = cpo_bounds(&mdp, &pi, &pi, &v).unwrap();
        assert!(rep2.holds);
        assert!(rep2.xi.is_finite());
        assert!((rep2.d_minus + rep2.d_plus).abs() < 1e-12);
    }

    #[test]
    fn cpo_bounds_hold_on_random_instances() {
        let mut rng = seed_rng(5);
        for case in 0..100 {
            let ns = rng.random_range(2..=6);
            let na = rng.random_range(2..=3);
            let gamma = if case % 2 == 0 { 0.5 } else { 0.9 };
            let mdp = TabularMdp::random(ns, na, gamma, &mut rng);
            let pi = crate::PolicyTable::random(ns, na, &mut rng);
            let pp = pi.perturbed(0.3, &mut rng);
            for f in [vec![0.0; ns], exact_values(&mdp, &pi).unwrap()] {
                let rep = cpo_bounds(&mdp, &pi, &pp, &f).unwrap();
                assert!(
                    rep.holds,
                    "case {case}: lhs {} outside [{}, {}]",
                    rep.lhs, rep.d_minus, rep.d_plus
                );
            }
        }
    }

    #[test]
    fn theorem1_identical_policies() {
        let mut rng = seed_rng(6);
        let mdp = TabularMdp::random(3, 2, 0.9, &mut rng);
        let mu = crate::PolicyTable::random(3, 2, &mut rng);
        let rep = theorem1_check(&mdp, &mu, &mu).unwrap();
        assert_eq!(rep.delta_literal, 0.0);
        assert_eq!(rep.delta_reward_weighted, 0.0);
        assert!(rep.rhs >= 0.0);
        assert!(rep.attack_succeeded);
        assert!(rep.condition_holds);
    }

    #[test]
    fn theorem1_literal_delta_is_always_zero() {
        let mut rng = seed_rng(7);
        for _ in 0..100 {
            let ns = rng.random_range(2..=6);
            let na = rng.random_range(2..=3);
            let mdp = TabularMdp::random(ns, na, 0.9, &mut rng);
            let mu = crate::PolicyTable::random(ns, na, &mut rng);
            let att = mu.perturbed(rng.random_range(0.0..1.0), &mut rng);
            let rep = theorem1_check(&mdp, &mu, &att).unwrap();
            assert!(rep.delta_literal.abs() < 1e-12, "literal delta {}", rep.delta_literal);
        }
    }

    #[test]
    fn theorem1_condition_holds_on_every_successful_attack() {
        let mut rng = seed_rng(8);
        let mut successes = 0;
        for _ in 0..200 {
            let ns = rng.random_range(2..=6);
            let na = rng.random_range(2..=3);
            let mdp = TabularMdp::random(ns, na, 0.9, &mut rng);
            let mu = crate::PolicyTable::random(ns, na, &mut rng);
            let att = mu.perturbed(rng.random_range(0.0..1.0), &mut rng);
            let rep = theorem1_check(&mdp, &mu, &att).unwrap();
            if rep.attack_succeeded {
                successes += 1;
                assert!(
                    rep.condition_holds,
                    "necessary condition failed on a successful attack: {rep:?}"
                );
            }
        }
        assert!(successes > 20, "fuzz corpus should contain successful attacks");
    }

    #[test]
    fn theorem2_kappa_examples() {
        // γ = 0.9, |R_max| = 1, R_min = -1 → κ = 18.
        let mdp = TabularMdp::new(
            vec![vec![vec![1.0], vec![1.0]]],
            vec![vec![1.0, -1.0]],
            0.9,
            vec![1.0],
        )
        .unwrap();
        let mu = crate::PolicyTable::uniform(1, 2);
        let rep = theorem2_check(&mdp, &mu, &mu).unwrap();
        assert!((rep.kappa - 18.0).abs() < 1e-12);

        // Theorem-1 coefficient at γ = 0.998: 2γ/(1-γ) = 998.
        let gamma: f64 = 0.998;
        let coeff = 2.0 * gamma / (1.0 - gamma);
        assert!((coeff - 998.0).abs() < 1e-9);
    }

    #[test]
    fn theorem2_requires_negative_rewards() {
        let mdp = single_state(1.0, 0.9);
        let mu = crate::PolicyTable::uniform(1, 1);
        assert!(matches!(
            theorem2_check(&mdp, &mu, &mu),
            Err(TheoryError::Precondition(_))
        ));
    }

    #[test]
    fn theorem2_sufficient_condition_never_false_fires() {
        let mut rng = seed_rng(9);
        for _ in 0..300 {
            let ns = rng.random_range(2..=6);
            let na = rng.random_range(2..=3);
            let gamma = if rng.random::<bool>() { 0.5 } else { 0.9 };
            let mut mdp = TabularMdp::random(ns, na, gamma, &mut rng);
            // force a negative reward somewhere
            mdp.r[0][0] = -mdp.r[0][0].abs().max(0.1);
            let mu = crate::PolicyTable::random(ns, na, &mut rng);
            let att = mu.perturbed(rng.random_range(0.0..1.0), &mut rng);
            let rep = theorem2_check(&mdp, &mu, &att).unwrap();
            if rep.sufficient_predicts {
                assert!(
                    rep.attack_succeeded,
                    "sufficient condition fired but attack failed: {rep:?}"
                );
            }
        }
    }

    #[test]
    fn theorem2_fires_on_a_constructed_strong_attack() {
        // The condition is very conservative (its rhs scales with
        // 2γ/(1-γ)), so firing non-trivially needs a small discount and an
        // attack that shifts all mass onto the worst action.
        let gamma = 0.25;
        let mdp = TabularMdp::new(
            vec![
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ],
            vec![vec![1.0, -1.0], vec![1.0, -1.0]],
            gamma,
            vec![0.5, 0.5],
        )
        .unwrap();
        let mu = crate::PolicyTable::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let att = crate::PolicyTable::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let rep = theorem2_check(&mdp, &mu, &att).unwrap();
        assert!(rep.sufficient_predicts, "constructed case should fire: {rep:?}");
        assert!(rep.attack_succeeded);

        // Degenerate fire: identical policies give 0 ≥ 0.
        let rep2 = theorem2_check(&mdp, &mu, &mu).unwrap();
        assert!(rep2.sufficient_predicts);
        assert!(rep2.attack_succeeded);
    }

    #[test]
    fn observation_map_attack_reuses_rows() {
        let mu = crate::PolicyTable::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let att = attacked_from_observation_map(&mu, &[1, 1]).unwrap();
        assert_eq!(att.probs[0], vec![0.0, 1.0]);
        assert_eq!(att.probs[1], vec![0.0, 1.0]);
        assert!(attacked_from_observation_map(&mu, &[0]).is_err());
        assert!(attacked_from_observation_map(&mu, &[0, 5]).is_err());
    }

    #[test]
    fn works_at_f32_precision() {
        let mdp = TabularMdpBase::<f32>::new(
            vec![vec![vec![1.0f32]]],
            vec![vec![1.0f32]],
            0.5,
            vec![1.0f32],
        )
        .unwrap();
        let pi = PolicyTableBase::<f32>::new(vec![vec![1.0f32]]).unwrap();
        let v = exact_values(&mdp, &pi).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-5);
    }
}
