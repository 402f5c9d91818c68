//! Perturbation-budget sweep: evaluates each method at several ε values
//! against a shared no-attack baseline, with monotonicity diagnostics.

use anyhow::{bail, Result};

use advrl_core::attacks::{AttackMethod, AttackSpec, NormKind};
use advrl_core::metrics::MetricsRow;
use advrl_core::ppo::Victim;
use advrl_core::star::StarAgent;

use crate::config::EnvConfig;
use crate::eval::{evaluate_cell, Attacker};

/// One method entry in a sweep: a gradient method at a step count, or STAR.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SweepMethod {
    Attack(AttackMethod, usize),
    Star,
}

impl SweepMethod {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "star" {
            return Ok(SweepMethod::Star);
        }
        // "pgd:10" selects the step count; bare names use 10 for iterative
        // methods and 1 for single-step ones.
        let (name, steps) = match s.split_once(':') {
            Some((n, k)) => (n, Some(k.parse::<usize>()?)),
            None => (s, None),
        };
        let Some(method) = AttackMethod::parse(name) else {
            bail!("unknown sweep method '{s}'");
        };
        let steps = steps.unwrap_or(if method.single_step() { 1 } else { 10 });
        Ok(SweepMethod::Attack(method, steps))
    }

    pub fn label(&self) -> (String, Option<u32>) {
        match self {
            SweepMethod::Attack(m, steps) => {
                (m.display_name().into(), if m.single_step() { None } else { Some(*steps as u32) })
            }
            SweepMethod::Star => ("STAR".into(), None),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub method: String,
    pub steps: Option<u32>,
    pub epsilon: f64,
    pub metrics: MetricsRow,
}

/// Runs `methods × epsilons` cells. ε = 0 is evaluated as the exact no-op
/// attacker. Row order is methods-major, epsilons ascending within a method.
pub fn epsilon_sweep(
    env_cfg: &EnvConfig,
    victim: &Victim,
    star: Option<&StarAgent>,
    methods: &[SweepMethod],
    epsilons: &[f64],
    norm: NormKind,
    episodes: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if epsilons.len() < 2 {
        bail!("sweep needs at least two epsilon values");
    }
    let baseline = evaluate_cell(env_cfg, victim, &Attacker::None, episodes, seed)?;
    let mut rows = Vec::new();
    for method in methods {
        for &eps in epsilons {
            let mut metrics = if eps == 0.0 {
                evaluate_cell(env_cfg, victim, &Attacker::None, episodes, seed)?
            } else {
                match method {
                    SweepMethod::Attack(m, steps) => {
                        let spec = AttackSpec::new(*m, norm, eps, *steps);
                        evaluate_cell(env_cfg, victim, &Attacker::Spec(&spec), episodes, seed)?
                    }
                    SweepMethod::Star => {
                        let Some(agent) = star else {
                            bail!("sweep includes 'star' but no STAR checkpoint was given");
                        };
                        let mut agent = agent.clone();
                        agent.cfg.epsilon = eps;
                        evaluate_cell(env_cfg, victim, &Attacker::Star(&agent), episodes, seed)?
                    }
                }
            };
            metrics.apply_baseline(&baseline);
            let (name, steps) = method.label();
            metrics.method = name.clone();
            metrics.steps = steps;
            rows.push(SweepRow { method: name, steps, epsilon: eps, metrics });
        }
    }
    Ok(rows)
}

/// Counts strict decreases of reward drop as ε grows, per method.
pub fn monotonicity_inversions(rows: &[SweepRow], tol: f64) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    methods.dedup();
    for m in methods {
        let mut drops: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == m)
            .filter_map(|r| r.metrics.reward_drop_pct.map(|d| (r.epsilon, d)))
            .collect();
        drops.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let inversions =
            drops.windows(2).filter(|w| w[1].1 < w[0].1 - tol).count();
        out.push((m, inversions));
    }
    out
}

pub const SWEEP_CSV_HEADER: &str = "method,steps,epsilon,reward_mean,reward_sd,reward_drop_pct,velocity_mean,velocity_sd,velocity_drop_pct,fall_rate_mean,fall_rate_sd,fall_rise_pp";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.steps.map(|s| s.to_string()).unwrap_or_default(),
            r.epsilon,
            m.reward.mean,
            m.reward.sd,
            m.reward_drop_pct.map(|v| v.to_string()).unwrap_or_default(),
            m.velocity.mean,
            m.velocity.sd,
            m.velocity_drop_pct.map(|v| v.to_string()).unwrap_or_default(),
            m.fall_rate.mean,
            m.fall_rate.sd,
            m.fall_rise_pp.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use advrl_core::metrics::{MetricsRow, Stat};

    fn row(method: &str, eps: f64, drop: f64) -> SweepRow {
        let mut m = MetricsRow::new(
            method,
            None,
            Stat { mean: 0.0, sd: 0.0 },
            Stat { mean: 0.0, sd: 0.0 },
            Stat { mean: 0.0, sd: 0.0 },
        );
        m.reward_drop_pct = Some(drop);
        SweepRow { method: method.into(), steps: None, epsilon: eps, metrics: m }
    }

    #[test]
    fn inversion_counting() {
        let rows = vec![
            row("FGSM", 0.01, 1.0),
            row("FGSM", 0.025, 3.0),
            row("FGSM", 0.05, 2.0),
            row("PGD", 0.01, 1.0),
            row("PGD", 0.025, 2.0),
            row("PGD", 0.05, 4.0),
        ];
        let inv = monotonicity_inversions(&rows, 1e-9);
        assert_eq!(inv, vec![("FGSM".to_string(), 1), ("PGD".to_string(), 0)]);
    }

    #[test]
    fn sweep_method_parsing() {
        assert_eq!(SweepMethod::parse("star").unwrap(), SweepMethod::Star);
        assert!(matches!(
            SweepMethod::parse("pgd:20").unwrap(),
            SweepMethod::Attack(AttackMethod::Pgd, 20)
        ));
        assert!(matches!(
            SweepMethod::parse("fgsm").unwrap(),
            SweepMethod::Attack(AttackMethod::Fgsm, 1)
        ));
        assert!(SweepMethod::parse("bogus").is_err());
    }
}
