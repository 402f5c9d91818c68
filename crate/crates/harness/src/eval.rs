//! Cell evaluation and the benchmark table: one row per attack method, with
//! paired episode seeds across methods, deterministic regardless of worker
//! thread count.

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use advrl_core::attacks::{run_attack, AttackMethod, AttackSpec, NormKind};
use advrl_core::envs::Env;
use advrl_core::metrics::{mean_sd, MetricsRow};
use advrl_core::ppo::Victim;
use advrl_core::rng::substream;
use advrl_core::star::{star_perturb, MaskMode, StarAgent};

use crate::config::{BenchmarkConfig, EnvConfig};

/// What perturbs the victim's observations in one table cell.
pub enum Attacker<'a> {
    None,
    Spec(&'a AttackSpec),
    Star(&'a StarAgent),
}

impl Attacker<'_> {
    pub fn label(&self) -> (String, Option<u32>) {
        match self {
            Attacker::None => ("No Attack".into(), None),
            Attacker::Spec(spec) => {
                let steps =
                    if spec.method.single_step() { None } else { Some(spec.steps as u32) };
                (spec.method.display_name().into(), steps)
            }
            Attacker::Star(_) => ("STAR".into(), None),
        }
    }

    fn perturb(
        &self,
        victim: &Victim,
        obs: &[f64],
        rng: &mut advrl_core::Rng,
    ) -> Result<Vec<f64>> {
        match self {
            Attacker::None => Ok(vec![0.0; obs.len()]),
            Attacker::Spec(spec) => Ok(run_attack(spec, &victim.policy, obs, rng)
                .map_err(|e| anyhow!("attack failed: {e}"))?
                .eta),
            Attacker::Star(agent) => {
                // Deterministic mask, fresh probe noise per step.
                Ok(star_perturb(agent, &victim.policy, obs, MaskMode::Deterministic, rng)
                    .map_err(|e| anyhow!("star perturbation failed: {e}"))?
                    .eta)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct EpisodeStats {
    reward: f64,
    velocity: f64,
    fall_pct: f64,
}

fn run_episode(
    env: &mut dyn Env,
    victim: &Victim,
    attacker: &Attacker<'_>,
    seed: u64,
    episode: u64,
) -> Result<EpisodeStats> {
    let mut env_rng = substream(seed, 0xE9E9, episode);
    let mut atk_rng = substream(seed, 0xA7A7, episode);
    let mut raw = env.reset(&mut env_rng);
    let mut reward = 0.0;
    let mut velocity = 0.0;
    let mut falls = 0.0;
    let mut steps = 0.0;
    loop {
        let obs = victim.norm.normalize(&raw);
        let eta = attacker.perturb(victim, &obs, &mut atk_rng)?;
        let attacked: Vec<f64> = obs.iter().zip(&eta).map(|(o, e)| o + e).collect();
        let action = victim.policy.mean(&attacked);
        let res = env.step(&action, &mut env_rng).map_err(|e| anyhow!("env step: {e}"))?;
        reward += res.reward;
        velocity += res.info.velocity;
        if res.info.fell {
            falls += 1.0;
        }
        steps += 1.0;
        raw = res.next_state;
        if res.terminal {
            break;
        }
    }
    Ok(EpisodeStats {
        reward: reward / steps,
        velocity: velocity / steps,
        fall_pct: falls / steps * 100.0,
    })
}

/// Evaluates one (victim, attacker) cell: per-episode means aggregated to
/// mean ± sd. Episode `i` always uses the stream derived from `(seed, i)`,
/// so cells are paired across attackers and results do not depend on the
/// rayon thread count.
pub fn evaluate_cell(
    env_cfg: &EnvConfig,
    victim: &Victim,
    attacker: &Attacker<'_>,
    episodes: usize,
    seed: u64,
) -> Result<MetricsRow> {
    {
        let env = env_cfg.build()?;
        if env.obs_dim() != victim.policy.obs_dim() {
            bail!(
                "env/victim dimension mismatch: env obs_dim {} vs victim {}",
                env.obs_dim(),
                victim.policy.obs_dim()
            );
        }
        if env.action_dim() != victim.policy.action_dim() {
            bail!(
                "env/victim dimension mismatch: env action_dim {} vs victim {}",
                env.action_dim(),
                victim.policy.action_dim()
            );
        }
    }
    let stats: Vec<EpisodeStats> = (0..episodes as u64)
        .into_par_iter()
        .map(|ep| {
            let mut env = env_cfg.build().expect("validated env config");
            run_episode(env.as_mut(), victim, attacker, seed, ep)
        })
        .collect::<Result<_>>()?;

    let rewards: Vec<f64> = stats.iter().map(|s| s.reward).collect();
    let velocities: Vec<f64> = stats.iter().map(|s| s.velocity).collect();
    let falls: Vec<f64> = stats.iter().map(|s| s.fall_pct).collect();
    let (method, steps) = attacker.label();
    Ok(MetricsRow::new(method, steps, mean_sd(&rewards), mean_sd(&velocities), mean_sd(&falls)))
}

/// The benchmark layout: No Attack, Random, FGSM, then each multi-step
/// method at the configured iteration counts, then STAR when provided.
pub fn benchmark_specs(
    methods: &[AttackMethod],
    norm: NormKind,
    epsilon: f64,
    step_counts: &[usize],
) -> Vec<AttackSpec> {
    let mut specs = Vec::new();
    for m in methods {
        if m.single_step() {
            specs.push(AttackSpec::new(*m, norm, epsilon, 1));
        } else {
            for &n in step_counts {
                specs.push(AttackSpec::new(*m, norm, epsilon, n));
            }
        }
    }
    specs
}

pub struct BenchmarkResult {
    pub rows: Vec<MetricsRow>,
    /// Per-cell failures; non-empty means a partial table.
    pub errors: Vec<String>,
}

/// Runs the full table. Cell failures are collected rather than aborting the
/// run; the caller decides whether a partial table is acceptable.
pub fn run_benchmark(cfg: &BenchmarkConfig, victim: &Victim, star: Option<&StarAgent>) -> Result<BenchmarkResult> {
    let methods = cfg.method_filter().unwrap_or_else(|| AttackMethod::ALL.to_vec());
    let specs = benchmark_specs(&methods, cfg.norm_kind(), cfg.epsilon, &cfg.steps);

    let mut rows = Vec::new();
    let mut errors = Vec::new();

    let baseline = evaluate_cell(&cfg.env, victim, &Attacker::None, cfg.episodes, cfg.seed)?;
    let mut base_row = baseline.clone();
    base_row.apply_baseline(&baseline);
    rows.push(base_row);

    for spec in &specs {
        match evaluate_cell(&cfg.env, victim, &Attacker::Spec(spec), cfg.episodes, cfg.seed) {
            Ok(mut row) => {
                row.apply_baseline(&baseline);
                rows.push(row);
            }
            Err(e) => errors.push(format!("{} (steps {}): {e}", spec.method.id(), spec.steps)),
        }
    }

    if let Some(agent) = star {
        // STAR shares the table's budget: the mask scales the sign direction,
        // so the trained agent is evaluated at the configured ε.
        let mut agent = agent.clone();
        agent.cfg.epsilon = cfg.epsilon;
        match evaluate_cell(&cfg.env, victim, &Attacker::Star(&agent), cfg.episodes, cfg.seed) {
            Ok(mut row) => {
                row.apply_baseline(&baseline);
                rows.push(row);
            }
            Err(e) => errors.push(format!("star: {e}")),
        }
    }
    Ok(BenchmarkResult { rows, errors })
}

// Shortest round-trip formatting: parsing the field recovers the exact f64,
// so drop/rise invariants survive a CSV round trip, and identical runs stay
// byte-identical.
fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

pub const BENCHMARK_CSV_HEADER: &str = "method,steps,reward_mean,reward_sd,reward_drop_pct,velocity_mean,velocity_sd,velocity_drop_pct,fall_rate_mean,fall_rate_sd,fall_rise_pp";
pub fn benchmark_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(BENCHMARK_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.steps.map(|s| s.to_string()).unwrap_or_default(),
            fmt_f(r.reward.mean),
            fmt_f(r.reward.sd),
            fmt_opt(r.reward_drop_pct),
            fmt_f(r.velocity.mean),
            fmt_f(r.velocity.sd),
            fmt_opt(r.velocity_drop_pct),
            fmt_f(r.fall_rate.mean),
            fmt_f(r.fall_rate.sd),
            fmt_opt(r.fall_rise_pp),
        ));
    }
    out
}

/// Percent formatting used in rendered tables: `12.965` -> `"12.965%"`.
pub fn fmt_pct(v: f64) -> String {
    format!("{v:.3}%")
}

/// Fraction-to-percent formatting: `0.339` -> `"33.900%"`.
pub fn format_drop_fraction(f: f64) -> String {
    fmt_pct(f * 100.0)
}

/// Markdown table with the best drop per column bold and the runner-up
/// italic (attack rows only).
pub fn benchmark_markdown(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str("| Method | Steps | Reward | Reward drop | Velocity | Velocity drop | Fall rate (%) | Fall rise (pp) |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");

    let rank = |get: &dyn Fn(&MetricsRow) -> Option<f64>| -> (Option<usize>, Option<usize>) {
        let mut scored: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.method != "No Attack")
            .filter_map(|(i, r)| get(r).map(|v| (i, v)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        (scored.first().map(|x| x.0), scored.get(1).map(|x| x.0))
    };
    let (rd_best, rd_second) = rank(&|r: &MetricsRow| r.reward_drop_pct);
    let (vd_best, vd_second) = rank(&|r: &MetricsRow| r.velocity_drop_pct);
    let (fr_best, fr_second) = rank(&|r: &MetricsRow| r.fall_rise_pp);

    let decorate = |i: usize, best: Option<usize>, second: Option<usize>, text: String| {
        if Some(i) == best {
            format!("**{text}**")
        } else if Some(i) == second {
            format!("_{text}_")
        } else {
            text
        }
    };

    for (i, r) in rows.iter().enumerate() {
        let steps = r.steps.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
        let rd = r.reward_drop_pct.map(fmt_pct).unwrap_or_default();
        let vd = r.velocity_drop_pct.map(fmt_pct).unwrap_or_default();
        let fr = r.fall_rise_pp.map(|v| format!("{v:.3}")).unwrap_or_default();
        out.push_str(&format!(
            "| {} | {} | {:.3} ± {:.3} | {} | {:.3} ± {:.3} | {} | {:.3} ± {:.3} | {} |\n",
            r.method,
            steps,
            r.reward.mean,
            r.reward.sd,
            decorate(i, rd_best, rd_second, rd),
            r.velocity.mean,
            r.velocity.sd,
            decorate(i, vd_best, vd_second, vd),
            r.fall_rate.mean,
            r.fall_rate.sd,
            decorate(i, fr_best, fr_second, fr),
        ));
    }
    out
}

/// Parses a benchmark CSV back into rows (used by `report`). Errors name the
/// offending file line.
pub fn parse_benchmark_csv(text: &str, file: &str) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == BENCHMARK_CSV_HEADER => {}
        Some((_, header)) => bail!("{file}:1: unexpected header '{header}'"),
        None => bail!("{file}: empty file"),
    }
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            bail!("{file}:{lineno}: expected 11 fields, got {}", fields.len());
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .with_context(|| format!("{file}:{lineno}: bad float '{}'", fields[i]))
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                f(i).map(Some)
            }
        };
        let steps = if fields[1].is_empty() {
            None
        } else {
            Some(
                fields[1]
                    .parse()
                    .with_context(|| format!("{file}:{lineno}: bad steps '{}'", fields[1]))?,
            )
        };
        rows.push(MetricsRow {
            method: fields[0].to_string(),
            steps,
            reward: advrl_core::metrics::Stat { mean: f(2)?, sd: f(3)? },
            reward_drop_pct: opt(4)?,
            velocity: advrl_core::metrics::Stat { mean: f(5)?, sd: f(6)? },
            velocity_drop_pct: opt(7)?,
            fall_rate: advrl_core::metrics::Stat { mean: f(8)?, sd: f(9)? },
            fall_rise_pp: opt(10)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_layout_row_count() {
        let specs =
            benchmark_specs(&AttackMethod::ALL, NormKind::Linf, 0.05, &[10, 20]);
        // Random + FGSM single-step, 7 iterative methods × 2 step counts.
        assert_eq!(specs.len(), 2 + 7 * 2);
        assert_eq!(specs[0].method, AttackMethod::Random);
        assert_eq!(specs[1].method, AttackMethod::Fgsm);
    }

    #[test]
    fn drop_fraction_formatting() {
        assert_eq!(format_drop_fraction(0.33900), "33.900%");
        assert_eq!(fmt_pct(12.965), "12.965%");
    }

    #[test]
    fn csv_roundtrip() {
        use advrl_core::metrics::{MetricsRow, Stat};
        let mut row = MetricsRow::new(
            "FGSM",
            None,
            Stat { mean: 0.819, sd: 0.033 },
            Stat { mean: 3.596, sd: 0.059 },
            Stat { mean: 0.779, sd: 0.094 },
        );
        let base = MetricsRow::new(
            "No Attack",
            None,
            Stat { mean: 0.941, sd: 0.010 },
            Stat { mean: 3.777, sd: 0.011 },
            Stat { mean: 0.464, sd: 0.018 },
        );
        row.apply_baseline(&base);
        let csv = benchmark_csv(&[row.clone()]);
        let parsed = parse_benchmark_csv(&csv, "mem").unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].method, "FGSM");
        // shortest round-trip formatting: the parse recovers the exact value
        assert_eq!(parsed[0].reward_drop_pct, row.reward_drop_pct);
        // and the invariant holds at full precision against the parsed raws
        let parsed_base = MetricsRow::new(
            "No Attack",
            None,
            parsed[0].reward,
            parsed[0].velocity,
            parsed[0].fall_rate,
        );
        let recomputed = advrl_core::metrics::drop_pct(
            parsed[0].reward.mean,
            base.reward.mean,
        )
        .unwrap();
        assert!((recomputed - parsed[0].reward_drop_pct.unwrap()).abs() < 1e-9);
        let _ = parsed_base;
    }

    #[test]
    fn malformed_csv_errors_name_the_line() {
        let text = format!("{BENCHMARK_CSV_HEADER}\nFGSM,10,bad,0,0,0,0,0,0,0,0\n");
        let err = parse_benchmark_csv(&text, "t.csv").unwrap_err().to_string();
        assert!(err.contains("t.csv:2"), "error was: {err}");
    }
}
