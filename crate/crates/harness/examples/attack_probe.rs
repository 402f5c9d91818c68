// Scratch: compare attack variants on a trained victim checkpoint.

use advrl_core::attacks::{AttackMethod, AttackSpec, NormKind};
use advrl_core::checkpoint::VictimCheckpoint;
use advrl_harness::config::env_from_name;
use advrl_harness::eval::{evaluate_cell, Attacker};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let victim_path = &args[1];
    let env_name = &args[2];
    let eps: f64 = args[3].parse().unwrap();
    let episodes: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1000);

    let victim = VictimCheckpoint::load(victim_path).unwrap().into_victim().unwrap();
    let env_cfg = env_from_name(env_name).unwrap();

    let base = evaluate_cell(&env_cfg, &victim, &Attacker::None, episodes, seed).unwrap();
    println!("baseline reward {:.4}", base.reward.mean);

    let mut variants: Vec<(String, AttackSpec)> = Vec::new();
    variants.push(("fgsm".into(), AttackSpec::new(AttackMethod::Fgsm, NormKind::Linf, eps, 1)));
    for init in [0.0, 1e-4, 0.25 * eps, 0.5 * eps, eps] {
        let mut s = AttackSpec::new(AttackMethod::Pgd, NormKind::Linf, eps, 10);
        s.init_scale = Some(init);
        variants.push((format!("pgd10 init={init:.4}"), s));
    }
    for steps in [20usize] {
        let mut s = AttackSpec::new(AttackMethod::Pgd, NormKind::Linf, eps, steps);
        s.init_scale = Some(0.5 * eps);
        variants.push((format!("pgd{steps} init=eps/2"), s));
    }

    for (name, spec) in &variants {
        let mut row = evaluate_cell(&env_cfg, &victim, &Attacker::Spec(spec), episodes, seed).unwrap();
        row.apply_baseline(&base);
        println!(
            "{name:24} reward {:.4} drop {:+.3}%",
            row.reward.mean,
            row.reward_drop_pct.unwrap()
        );
    }
}
