//! Batch verification on random tabular MDPs: exact values against a
//! power-iteration oracle, visitation against Monte-Carlo sampling, the
//! two-sided performance-difference bounds, and both attack-success
//! condition checks. Emits one JSON line per instance, a violations dump
//! with full instance tables, and a summary CSV.

use anyhow::Result;
use rand::Rng as _;
use serde::Serialize;

use advrl_core::rng::substream;
use advrl_core::testkit;
use advrl_core::theory::{
    attacked_from_observation_map, cpo_bounds, exact_values, theorem1_check, theorem2_check,
    tv_per_state, visitation, BoundReport, Theorem1Report, Theorem2Report,
};
use advrl_core::{PolicyTable, TabularMdp};

#[derive(Clone, Copy, Debug)]
pub struct TheorySuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub mc_samples: usize,
}

impl Default for TheorySuiteConfig {
    fn default() -> Self {
        Self { instances: 200, seed: 0, mc_samples: 100_000 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InstanceRecord {
    pub idx: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub attack_kind: String,
    /// Max abs difference between the linear-solve values and the
    /// power-iteration oracle.
    pub value_err: f64,
    /// Max abs difference between the visitation solve and Monte-Carlo.
    pub visitation_err: f64,
    pub bound_zero_f: BoundReport,
    pub bound_value_f: BoundReport,
    pub theorem1: Theorem1Report,
    pub theorem2: Option<Theorem2Report>,
    pub violations: Vec<String>,
}

/// Full instance dump archived when any check fails.
#[derive(Clone, Debug, Serialize)]
pub struct ViolationRecord {
    pub idx: usize,
    pub violations: Vec<String>,
    pub gamma: f64,
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub s0: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub attacked: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TheorySummary {
    pub instances: usize,
    pub value_err_max: f64,
    pub visitation_err_max: f64,
    pub bounds_checked: usize,
    pub bounds_held: usize,
    pub delta_literal_max_abs: f64,
    pub t1_successful_attacks: usize,
    pub t1_condition_held: usize,
    pub t2_checked: usize,
    pub t2_fired: usize,
    pub t2_false_fires: usize,
    pub violation_count: usize,
}

pub struct TheoryOutcome {
    pub records: Vec<InstanceRecord>,
    pub violations: Vec<ViolationRecord>,
    pub summary: TheorySummary,
}

pub fn run_theory_suite(cfg: &TheorySuiteConfig) -> Result<TheoryOutcome> {
    let mut records = Vec::with_capacity(cfg.instances);
    let mut dumps = Vec::new();
    let mut summary = TheorySummary { instances: cfg.instances, ..Default::default() };

    for idx in 0..cfg.instances {
        let mut rng = substream(cfg.seed, 0x74E0, idx as u64);
        let n_states = rng.random_range(2..=6);
        let n_actions = rng.random_range(2..=3);
        let gamma = if idx % 2 == 0 { 0.5 } else { 0.9 };
        let mdp = TabularMdp::random(n_states, n_actions, gamma, &mut rng);
        let mu = PolicyTable::random(n_states, n_actions, &mut rng);

        let (attacked, attack_kind) = match idx % 5 {
            0 | 1 | 2 => {
                let scale = rng.random_range(0.05..1.0);
                (mu.perturbed(scale, &mut rng), format!("perturbed({scale:.3})"))
            }
            3 => {
                let map: Vec<usize> =
                    (0..n_states).map(|s| if rng.random::<bool>() { s } else { rng.random_range(0..n_states) }).collect();
                (attacked_from_observation_map(&mu, &map)?, "observation-map".to_string())
            }
            _ => (PolicyTable::random(n_states, n_actions, &mut rng), "independent".to_string()),
        };

        let mut violations = Vec::new();

        // (a) exact values vs the power-iteration oracle
        let v = exact_values(&mdp, &mu)?;
        let oracle = testkit::power_iteration_values(&mdp, &mu, 1_000_000, 1e-13);
        let value_err = v
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        if value_err >= 1e-8 {
            violations.push(format!("value error {value_err} vs power iteration"));
        }
        summary.value_err_max = summary.value_err_max.max(value_err);

        // (b) visitation vs the Monte-Carlo oracle
        let d = visitation(&mdp, &mu)?;
        let mc = testkit::monte_carlo_visitation(&mdp, &mu, cfg.mc_samples, &mut rng);
        let visitation_err = d
            .iter()
            .zip(&mc)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        if visitation_err >= 2e-2 {
            violations.push(format!("visitation error {visitation_err} vs Monte-Carlo"));
        }
        summary.visitation_err_max = summary.visitation_err_max.max(visitation_err);
        // the solve itself must be a distribution
        if d.iter().any(|&x| x < -1e-12) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            violations.push("visitation is not a probability distribution".into());
        }
        // sanity on the TV range
        if tv_per_state(&mu, &attacked).iter().any(|&t| !(0.0..=1.0 + 1e-12).contains(&t)) {
            violations.push("TV out of [0,1]".into());
        }

        // (c) performance-difference bounds, f = 0 and f = V^μ
        let zero_f = vec![0.0; n_states];
        let bound_zero_f = cpo_bounds(&mdp, &mu, &attacked, &zero_f)?;
        let bound_value_f = cpo_bounds(&mdp, &mu, &attacked, &v)?;
        for (name, rep) in [("f=0", &bound_zero_f), ("f=V", &bound_value_f)] {
            summary.bounds_checked += 1;
            if rep.holds {
                summary.bounds_held += 1;
            } else {
                violations.push(format!(
                    "bound {name} violated: lhs {} not in [{}, {}]",
                    rep.lhs, rep.d_minus, rep.d_plus
                ));
            }
        }

        // (d) the literal state-wise divergence is identically zero
        let theorem1 = theorem1_check(&mdp, &mu, &attacked)?;
        summary.delta_literal_max_abs =
            summary.delta_literal_max_abs.max(theorem1.delta_literal.abs());
        if theorem1.delta_literal.abs() > 1e-12 {
            violations.push(format!("delta_literal {} != 0", theorem1.delta_literal));
        }

        // (e) necessary condition on successful attacks
        if theorem1.attack_succeeded {
            summary.t1_successful_attacks += 1;
            if theorem1.condition_holds {
                summary.t1_condition_held += 1;
            } else {
                violations.push(format!(
                    "necessary condition failed on a successful attack: delta_rw {} > rhs {}",
                    theorem1.delta_reward_weighted, theorem1.rhs
                ));
            }
        }

        // sufficient condition statistics (requires negative rewards)
        let theorem2 = if mdp.min_reward() < 0.0 {
            let rep = theorem2_check(&mdp, &mu, &attacked)?;
            summary.t2_checked += 1;
            if rep.sufficient_predicts {
                summary.t2_fired += 1;
                if !rep.attack_succeeded {
                    summary.t2_false_fires += 1;
                    violations.push(format!(
                        "sufficient condition fired but attack failed: lhs {} rhs {}",
                        rep.lhs, rep.rhs
                    ));
                }
            }
            Some(rep)
        } else {
            None
        };

        if !violations.is_empty() {
            dumps.push(ViolationRecord {
                idx,
                violations: violations.clone(),
                gamma,
                p: mdp.p.clone(),
                r: mdp.r.clone(),
                s0: mdp.s0.clone(),
                mu: mu.probs.clone(),
                attacked: attacked.probs.clone(),
            });
        }

        records.push(InstanceRecord {
            idx,
            n_states,
            n_actions,
            gamma,
            attack_kind,
            value_err,
            visitation_err,
            bound_zero_f,
            bound_value_f,
            theorem1,
            theorem2,
            violations,
        });
    }
    summary.violation_count = dumps.len();
    Ok(TheoryOutcome { records, violations: dumps, summary })
}

pub fn records_jsonl(records: &[InstanceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn violations_jsonl(violations: &[ViolationRecord]) -> Result<String> {
    let mut out = String::new();
    for v in violations {
        out.push_str(&serde_json::to_string(v)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn summary_csv(s: &TheorySummary) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("instances,{}\n", s.instances));
    out.push_str(&format!("value_err_max,{:.3e}\n", s.value_err_max));
    out.push_str(&format!("visitation_err_max,{:.3e}\n", s.visitation_err_max));
    out.push_str(&format!("bounds_checked,{}\n", s.bounds_checked));
    out.push_str(&format!("bounds_held,{}\n", s.bounds_held));
    out.push_str(&format!("delta_literal_max_abs,{:.3e}\n", s.delta_literal_max_abs));
    out.push_str(&format!("t1_successful_attacks,{}\n", s.t1_successful_attacks));
    out.push_str(&format!("t1_condition_held,{}\n", s.t1_condition_held));
    out.push_str(&format!("t2_checked,{}\n", s.t2_checked));
    out.push_str(&format!("t2_fired,{}\n", s.t2_fired));
    out.push_str(&format!("t2_false_fires,{}\n", s.t2_false_fires));
    out.push_str(&format!("violations,{}\n", s.violation_count));
    out
}
