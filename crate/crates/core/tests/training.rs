//! Desk-scale training checks: these run full (small) training loops and
//! assert qualitative trends, so they are slower than the unit tests.

use advrl_core::envs::{BalancerConfig, BalancerEnv, Env, PointGoalConfig, PointGoalEnv};
use advrl_core::ppo::{train_victim, PpoConfig};
use advrl_core::rng::substream;

#[test]
fn balancer_fall_rate_decreases_over_training() {
    let env = BalancerEnv::new(BalancerConfig::default());
    let cfg = PpoConfig::default();
    let (_victim, curve) = train_victim(&env, &cfg, 20_480, 4096, 8, 0).unwrap();
    assert!(curve.len() >= 3, "need at least three eval windows, got {}", curve.len());
    let first = curve.first().unwrap().fall_rate_pct;
    let last = curve.last().unwrap().fall_rate_pct;
    assert!(
        last < first,
        "fall rate should decrease from first to last window: {first} -> {last}"
    );
}

#[test]
fn point_goal_reach_rate_exceeds_080_after_training() {
    let env = PointGoalEnv::new(PointGoalConfig::default());
    let cfg = PpoConfig::default();
    let (victim, _curve) = train_victim(&env, &cfg, 20_480, 10_240, 4, 0).unwrap();

    let episodes = 20;
    let mut reached = 0;
    for ep in 0..episodes {
        let mut e = env.clone();
        let mut rng = substream(123, 0xE7A1, ep);
        let mut raw = e.reset(&mut rng);
        let mut steps = 0;
        let mut fell = false;
        loop {
            let obs = victim.norm.normalize(&raw);
            let action = victim.policy.mean(&obs);
            let res = e.step(&action, &mut rng).unwrap();
            steps += 1;
            fell |= res.info.fell;
            raw = res.next_state;
            if res.terminal {
                break;
            }
        }
        // Early termination without a hazard hit means the goal was reached.
        if steps < e.max_steps() && !fell {
            reached += 1;
        }
    }
    let rate = reached as f64 / episodes as f64;
    assert!(rate > 0.8, "goal-reach rate {rate} should exceed 0.8");
}
