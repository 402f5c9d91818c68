use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use advrl_core::checkpoint::{StarCheckpoint, VictimCheckpoint};
use advrl_core::envs::Env;
use advrl_core::ppo::{train_victim, CurveRow, PpoConfig, Victim};
use advrl_core::star::{train_star, EntropySign, StarAgent, StarConfig, StarCurveRow};

use advrl_harness::config::{
    env_from_name, env_out_dir_override, env_seed_override, BenchmarkConfig, EnvConfig,
};
use advrl_harness::defense::{adversarial_training, defense_csv};
use advrl_harness::eval::{benchmark_csv, benchmark_markdown, run_benchmark};
use advrl_harness::report::generate_report;
use advrl_harness::sweep::{epsilon_sweep, monotonicity_inversions, sweep_csv, SweepMethod};
use advrl_harness::theory_suite::{
    records_jsonl, run_theory_suite, summary_csv, violations_jsonl, TheorySuiteConfig,
};

#[derive(Parser)]
#[command(
    name = "advrl",
    version,
    about = "Adversarial-robustness testbed for small continuous-control RL policies.",
    after_help = "Environment overrides: ADVRL_SEED replaces any --seed/config seed; \
                  ADVRL_OUT_DIR replaces output directories."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a PPO victim policy and save its checkpoint.
    TrainVictim {
        /// Environment: "balancer" or "point-goal".
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 40_000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Victim checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training-curve CSV output path.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long, default_value_t = 4096)]
        eval_every: u64,
        #[arg(long, default_value_t = 8)]
        eval_episodes: usize,
    },
    /// Train the STAR adversary against a frozen victim.
    TrainAdversary {
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 150)]
        episodes: u64,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Entropy-term sign: "eq18" (minimize entropy) or "alg1".
        #[arg(long, default_value = "eq18")]
        entropy_sign: String,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run the benchmark table described by a TOML config.
    AttackEval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Adversarial training: continue PPO under STAR perturbations.
    Defend {
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        star: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 20_000)]
        steps: u64,
        #[arg(long, default_value_t = 4000)]
        warmup: u64,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defended-victim checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Exact tabular-MDP verification suite (bounds and success conditions).
    TheoryCheck {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        mc_samples: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate methods across several perturbation budgets.
    Sweep {
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        star: Option<PathBuf>,
        #[arg(long)]
        env: String,
        /// Comma-separated budgets, e.g. "0.01,0.025,0.05".
        #[arg(long)]
        epsilons: String,
        /// Comma-separated methods, e.g. "fgsm,pgd:10,star".
        #[arg(long, default_value = "fgsm,pgd:10")]
        methods: String,
        #[arg(long, default_value = "linf")]
        norm: String,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a markdown report (plus SVG charts) from a results directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Output markdown path; defaults to <dir>/report.md.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn effective_seed(cli_seed: u64) -> u64 {
    env_seed_override().unwrap_or(cli_seed)
}

fn load_victim(path: &PathBuf) -> Result<Victim> {
    Ok(VictimCheckpoint::load(path)
        .map_err(|e| anyhow!("loading victim {}: {e}", path.display()))?
        .into_victim()?)
}

fn load_star(path: &PathBuf) -> Result<StarAgent> {
    Ok(StarCheckpoint::load(path)
        .map_err(|e| anyhow!("loading star agent {}: {e}", path.display()))?
        .into_agent()?)
}

fn victim_curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("step,reward_mean,velocity_mean,fall_rate_pct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.step, r.reward_mean, r.velocity_mean, r.fall_rate_pct
        ));
    }
    out
}

fn star_curve_csv(rows: &[StarCurveRow]) -> String {
    let mut out = String::from("episode,adv_reward_mean,value_loss,mask_objective\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.episode, r.adv_reward_mean, r.value_loss, r.mask_objective
        ));
    }
    out
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::TrainVictim { env, steps, seed, out, curve, eval_every, eval_episodes } => {
            let seed = effective_seed(seed);
            let env_cfg = env_from_name(&env)?;
            let proto = env_cfg.build_concrete()?;
            let cfg = PpoConfig::default();
            println!("training victim on {env} for {steps} steps (seed {seed})");
            let (victim, curve_rows) =
                train_victim(&proto, &cfg, steps, eval_every, eval_episodes, seed)
                    .map_err(|e| anyhow!("training failed: {e}"))?;
            VictimCheckpoint::from_victim(&victim, &env).save(&out)?;
            println!("saved victim checkpoint to {}", out.display());
            if let Some(curve_path) = curve {
                std::fs::write(&curve_path, victim_curve_csv(&curve_rows))?;
                println!("saved training curve to {}", curve_path.display());
            }
            if let Some(last) = curve_rows.last() {
                println!(
                    "final eval: reward {:.4}, velocity {:.4}, fall rate {:.4}%",
                    last.reward_mean, last.velocity_mean, last.fall_rate_pct
                );
            }
            Ok(())
        }
        Cmd::TrainAdversary {
            victim,
            env,
            episodes,
            epsilon,
            seed,
            out,
            curve,
            entropy_sign,
            beta,
            alpha,
        } => {
            let seed = effective_seed(seed);
            let victim = load_victim(&victim)?;
            let env_cfg = env_from_name(&env)?;
            let mut proto = env_cfg.build_concrete()?;
            if proto.obs_dim() != victim.policy.obs_dim() {
                bail!(
                    "env/victim dimension mismatch: {} vs {}",
                    proto.obs_dim(),
                    victim.policy.obs_dim()
                );
            }
            let mut cfg = StarConfig::new(epsilon);
            cfg.entropy_sign = match entropy_sign.as_str() {
                "eq18" => EntropySign::MinimizeEntropy,
                "alg1" => EntropySign::MaximizeEntropy,
                other => bail!("unknown entropy sign '{other}' (expected 'eq18' or 'alg1')"),
            };
            if let Some(b) = beta {
                cfg.beta = b;
            }
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            let mut init_rng = advrl_core::rng::substream(seed, 0x57AA, 0);
            let mut agent = StarAgent::new(victim.policy.obs_dim(), cfg, &mut init_rng)?;
            println!("training STAR for {episodes} episodes at epsilon {epsilon} (seed {seed})");
            let curve_rows = train_star(&mut agent, &victim, &mut proto, episodes, seed)
                .map_err(|e| anyhow!("adversary training failed: {e}"))?;
            StarCheckpoint::from_agent(&agent).save(&out)?;
            println!("saved STAR checkpoint to {}", out.display());
            if let Some(curve_path) = curve {
                std::fs::write(&curve_path, star_curve_csv(&curve_rows))?;
                println!("saved adversary curve to {}", curve_path.display());
            }
            if let Some(last) = curve_rows.last() {
                println!("final adversary reward per step: {:.4}", last.adv_reward_mean);
            }
            Ok(())
        }
        Cmd::AttackEval { config } => {
            let cfg = BenchmarkConfig::load(&config)?;
            let victim = load_victim(&cfg.victim)?;
            let star = cfg.star.as_ref().map(load_star).transpose()?;
            std::fs::create_dir_all(&cfg.out_dir)
                .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
            let result = run_benchmark(&cfg, &victim, star.as_ref())?;
            let csv = benchmark_csv(&result.rows);
            std::fs::write(cfg.out_dir.join("benchmark.csv"), &csv)?;
            let md = benchmark_markdown(&result.rows);
            std::fs::write(cfg.out_dir.join("benchmark.md"), &md)?;
            println!("{md}");
            println!("wrote {}", cfg.out_dir.join("benchmark.csv").display());
            if !result.errors.is_empty() {
                for e in &result.errors {
                    eprintln!("cell failed: {e}");
                }
                bail!("{} cell(s) failed; table is partial", result.errors.len());
            }
            Ok(())
        }
        Cmd::Defend { victim, star, env, steps, warmup, epsilon, seed, out, curve } => {
            let seed = effective_seed(seed);
            let mut v = load_victim(&victim)?;
            let agent = load_star(&star)?;
            let env_cfg = env_from_name(&env)?;
            let proto = env_cfg.build_concrete()?;
            println!(
                "adversarial training for {steps} steps (warmup {warmup}, epsilon {epsilon}, seed {seed})"
            );
            let cfg = PpoConfig::default();
            let rows =
                adversarial_training(&mut v, &agent, &proto, steps, warmup, epsilon, &cfg, seed)?;
            VictimCheckpoint::from_victim(&v, &env).save(&out)?;
            println!("saved defended victim to {}", out.display());
            if let Some(curve_path) = curve {
                std::fs::write(&curve_path, defense_csv(&rows))?;
                println!("saved defense curve to {}", curve_path.display());
            }
            Ok(())
        }
        Cmd::TheoryCheck { instances, seed, mc_samples, out_dir } => {
            let seed = effective_seed(seed);
            let out_dir = env_out_dir_override().unwrap_or(out_dir);
            std::fs::create_dir_all(&out_dir)?;
            let cfg = TheorySuiteConfig { instances, seed, mc_samples };
            let outcome = run_theory_suite(&cfg)?;
            std::fs::write(out_dir.join("theory.jsonl"), records_jsonl(&outcome.records)?)?;
            std::fs::write(
                out_dir.join("theory_violations.jsonl"),
                violations_jsonl(&outcome.violations)?,
            )?;
            let summary = summary_csv(&outcome.summary);
            std::fs::write(out_dir.join("theory_summary.csv"), &summary)?;
            println!("{summary}");
            if outcome.summary.violation_count > 0 {
                bail!(
                    "{} instance(s) violated a checked property; see theory_violations.jsonl",
                    outcome.summary.violation_count
                );
            }
            println!(
                "all {} instances passed: bounds {}/{}, necessary condition {}/{}",
                outcome.summary.instances,
                outcome.summary.bounds_held,
                outcome.summary.bounds_checked,
                outcome.summary.t1_condition_held,
                outcome.summary.t1_successful_attacks
            );
            Ok(())
        }
        Cmd::Sweep { victim, star, env, epsilons, methods, norm, episodes, seed, out } => {
            let seed = effective_seed(seed);
            let victim = load_victim(&victim)?;
            let star = star.as_ref().map(load_star).transpose()?;
            let env_cfg: EnvConfig = env_from_name(&env)?;
            let eps: Vec<f64> = epsilons
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad epsilon '{s}': {e}")))
                .collect::<Result<_>>()?;
            let methods: Vec<SweepMethod> =
                methods.split(',').map(|s| SweepMethod::parse(s.trim())).collect::<Result<_>>()?;
            let norm = advrl_core::attacks::NormKind::parse(&norm)
                .ok_or_else(|| anyhow!("unknown norm '{norm}'"))?;
            let rows = epsilon_sweep(
                &env_cfg,
                &victim,
                star.as_ref(),
                &methods,
                &eps,
                norm,
                episodes,
                seed,
            )?;
            std::fs::write(&out, sweep_csv(&rows))?;
            println!("wrote {}", out.display());
            for (method, inversions) in monotonicity_inversions(&rows, 1e-9) {
                println!("monotonicity[{method}]: {inversions} inversion(s) in reward drop");
            }
            Ok(())
        }
        Cmd::Report { dir, out } => {
            let out = out.unwrap_or_else(|| dir.join("report.md"));
            generate_report(&dir, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
