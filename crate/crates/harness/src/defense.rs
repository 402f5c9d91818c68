//! Adversarial training: continue PPO on a pretrained victim while a frozen
//! STAR agent perturbs every observation after a warm-up phase. The curve
//! records training-time (attacked) statistics per rollout, which is where
//! the dip-then-recovery shape shows up.

use anyhow::{anyhow, Result};

use advrl_core::envs::Env;
use advrl_core::ppo::{collect_rollout, ppo_update, PerturbHook, PpoConfig, PpoOptimizer, Victim};
use advrl_core::rng::substream;
use advrl_core::star::{star_perturb, MaskMode, StarAgent};

#[derive(Clone, Copy, Debug)]
pub struct DefenseCurveRow {
    pub step: u64,
    pub reward_mean: f64,
    pub velocity_mean: f64,
    pub fall_rate_pct: f64,
    pub attack_on: bool,
}

/// Continues PPO training for `total_steps`, switching the STAR attack on
/// after `warmup` steps at budget `epsilon` (0 disables the attack exactly,
/// reducing this to plain continued training). The observation normalizer is
/// frozen so the budget keeps its meaning. Returns the training curve; the
/// victim is updated in place.
pub fn adversarial_training<E: Env + Clone>(
    victim: &mut Victim,
    star: &StarAgent,
    env_proto: &E,
    total_steps: u64,
    warmup: u64,
    epsilon: f64,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<Vec<DefenseCurveRow>> {
    let mut agent = star.clone();
    agent.cfg.epsilon = epsilon;

    let mut env = env_proto.clone();
    let mut env_rng = substream(seed, 0xDEF1, 0);
    let mut update_rng = substream(seed, 0xDEF2, 0);
    let mut opt = PpoOptimizer::new(cfg.lr);
    let mut curve = Vec::new();
    let mut steps_done: u64 = 0;

    while steps_done < total_steps {
        let attack_on = steps_done >= warmup && epsilon > 0.0;
        let todo = cfg.rollout.min((total_steps - steps_done) as usize);

        let mut hook = |obs: &[f64], v: &Victim, rng: &mut advrl_core::Rng| -> Vec<f64> {
            match star_perturb(&agent, &v.policy, obs, MaskMode::Deterministic, rng) {
                Ok(p) => p.eta,
                Err(_) => vec![0.0; obs.len()],
            }
        };
        let hook_opt: Option<&mut PerturbHook<'_>> =
            if attack_on { Some(&mut hook) } else { None };

        let mut rollout = collect_rollout(&mut env, victim, todo, false, hook_opt, &mut env_rng)
            .map_err(|e| anyhow!("rollout failed: {e}"))?;
        rollout.finalize(cfg.gamma, cfg.gae_lambda).map_err(|e| anyhow!("gae failed: {e}"))?;

        let n = rollout.len() as f64;
        let reward_mean = rollout.transitions.iter().map(|t| t.reward).sum::<f64>() / n;
        let velocity_mean = rollout.transitions.iter().map(|t| t.velocity).sum::<f64>() / n;
        let falls = rollout.transitions.iter().filter(|t| t.fell).count() as f64;

        ppo_update(victim, &rollout, cfg, &mut opt, &mut update_rng)
            .map_err(|e| anyhow!("update failed: {e}"))?;
        steps_done += rollout.len() as u64;
        curve.push(DefenseCurveRow {
            step: steps_done,
            reward_mean,
            velocity_mean,
            fall_rate_pct: falls / n * 100.0,
            attack_on,
        });
    }
    Ok(curve)
}

pub const DEFENSE_CSV_HEADER: &str = "step,reward_mean,velocity_mean,fall_rate_pct,attack_on";

pub fn defense_csv(rows: &[DefenseCurveRow]) -> String {
    let mut out = String::from(DEFENSE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            r.step, r.reward_mean, r.velocity_mean, r.fall_rate_pct, r.attack_on as u8
        ));
    }
    out
}

/// Dip-then-recovery check on a defense curve: the minimum window mean after
/// attack onset must be exceeded by the final window mean.
pub fn dip_and_recovery(rows: &[DefenseCurveRow], window: usize) -> Option<(f64, f64)> {
    let onset = rows.iter().position(|r| r.attack_on)?;
    let post = &rows[onset..];
    if post.len() < 2 * window {
        return None;
    }
    let window_means: Vec<f64> = post
        .windows(window)
        .map(|w| w.iter().map(|r| r.reward_mean).sum::<f64>() / window as f64)
        .collect();
    let min = window_means.iter().cloned().fold(f64::INFINITY, f64::min);
    let last = *window_means.last()?;
    Some((min, last))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_stable() {
        let rows = vec![DefenseCurveRow {
            step: 2048,
            reward_mean: 0.5,
            velocity_mean: 1.25,
            fall_rate_pct: 0.1,
            attack_on: true,
        }];
        let csv = defense_csv(&rows);
        assert!(csv.lines().nth(1).unwrap().starts_with("2048,0.500000,1.250000,0.100000,1"));
    }

    #[test]
    fn dip_and_recovery_extracts_windows() {
        let mk = |step: u64, r: f64, on: bool| DefenseCurveRow {
            step,
            reward_mean: r,
            velocity_mean: 0.0,
            fall_rate_pct: 0.0,
            attack_on: on,
        };
        let rows = vec![
            mk(1, 1.0, false),
            mk(2, 0.9, true),
            mk(3, 0.3, true),
            mk(4, 0.4, true),
            mk(5, 0.8, true),
            mk(6, 0.9, true),
        ];
        let (min, last) = dip_and_recovery(&rows, 2).unwrap();
        assert!(min < 0.4);
        assert!(last > min);
    }
}
