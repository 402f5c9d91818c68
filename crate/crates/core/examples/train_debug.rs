// Scratch harness for tuning PPO on the balancer. Not part of the test suite.

use advrl_core::envs::{BalancerConfig, BalancerEnv, Env, PointGoalConfig, PointGoalEnv};
use advrl_core::ppo::{
    collect_rollout, evaluate_policy, ppo_update, PpoConfig, PpoOptimizer, Victim,
};
use advrl_core::rng::substream;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("balancer");
    let steps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40_000);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    match which {
        "balancer" => run(BalancerEnv::new(BalancerConfig::default()), steps, seed),
        "pointgoal" => run(PointGoalEnv::new(PointGoalConfig::default()), steps, seed),
        other => eprintln!("unknown env {other}"),
    }
}

fn run<E: Env + Clone>(env_proto: E, total: u64, seed: u64) {
    let cfg = PpoConfig::default();
    let mut init_rng = substream(seed, 0x1717, 0);
    let mut victim =
        Victim::new(env_proto.obs_dim(), env_proto.action_dim(), &cfg.hidden, &mut init_rng);
    let mut env = env_proto.clone();
    let mut env_rng = substream(seed, 0xE4B, 0);
    let mut update_rng = substream(seed, 0x0B7, 0);
    let mut opt = PpoOptimizer::new(cfg.lr);
    let mut done = 0u64;
    println!("step,reward,velocity,fall_pct,reach,kl,lr,policy_loss,value_loss,log_std0");
    while done < total {
        let mut rollout =
            collect_rollout(&mut env, &mut victim, cfg.rollout, true, None, &mut env_rng).unwrap();
        rollout.finalize(cfg.gamma, cfg.gae_lambda).unwrap();
        let stats = ppo_update(&mut victim, &rollout, &cfg, &mut opt, &mut update_rng).unwrap();
        done += rollout.len() as u64;
        let (r, v, f) = evaluate_policy(&env_proto, &victim, 8, seed ^ 0x5EED).unwrap();
        // goal-reach proxy: deterministic episodes ending early without a fall
        let mut reach = 0.0;
        for ep in 0..8u64 {
            let mut e2 = env_proto.clone();
            let mut rng = substream(seed ^ 0x5EED, 0xE7A1, ep);
            let mut raw = e2.reset(&mut rng);
            let mut steps = 0usize;
            let mut fell = false;
            loop {
                let obs = victim.norm.normalize(&raw);
                let a = victim.policy.mean(&obs);
                let res = e2.step(&a, &mut rng).unwrap();
                steps += 1;
                fell |= res.info.fell;
                raw = res.next_state;
                if res.terminal {
                    break;
                }
            }
            if steps < e2.max_steps() && !fell {
                reach += 1.0 / 8.0;
            }
        }
        println!(
            "{done},{r:.4},{v:.4},{f:.4},{reach:.3},{:.5},{:.6},{:.4},{:.4},{:.3}",
            stats.kl,
            stats.lr,
            stats.policy_loss,
            stats.value_loss,
            victim.policy.log_std.data()[0]
        );
    }
}
