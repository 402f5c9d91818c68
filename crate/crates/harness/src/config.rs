//! Experiment configuration: TOML schema, environment construction, and the
//! two environment-variable overrides (`ADVRL_SEED`, `ADVRL_OUT_DIR`).
//!
//! Benchmark config schema:
//!
//! ```toml
//! seed = 42            # base seed; episode i uses a stream derived from it
//! episodes = 20        # episodes per table cell
//! epsilon = 0.05       # perturbation budget (normalized-observation units)
//! norm = "linf"        # or "l2"
//! steps = [10, 20]     # iteration counts for multi-step methods
//! victim = "victim.json"
//! star = "star.json"   # optional; adds the STAR row
//! out_dir = "runs/bench"
//! # methods = ["random", "fgsm", "pgd"]   # optional subset (canonical order kept)
//!
//! [env]
//! kind = "balancer"    # or "point-goal"
//! # jitter = 0.01      # reset jitter override
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use advrl_core::attacks::{AttackMethod, NormKind};
use advrl_core::envs::{
    BalancerConfig, BalancerEnv, Env, EnvError, PointGoalConfig, PointGoalEnv, StepResult,
};
use advrl_core::Rng;

/// Which continuous environment to construct.
#[derive(Clone, Debug, Deserialize)]
pub struct EnvConfig {
    pub kind: String,
    #[serde(default)]
    pub jitter: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Balancer,
    PointGoal,
}

/// Clonable concrete environment, needed by the generic training loops.
#[derive(Clone)]
pub enum ConcreteEnv {
    Balancer(BalancerEnv),
    PointGoal(PointGoalEnv),
}

impl Env for ConcreteEnv {
    fn obs_dim(&self) -> usize {
        match self {
            ConcreteEnv::Balancer(e) => e.obs_dim(),
            ConcreteEnv::PointGoal(e) => e.obs_dim(),
        }
    }

    fn action_dim(&self) -> usize {
        match self {
            ConcreteEnv::Balancer(e) => e.action_dim(),
            ConcreteEnv::PointGoal(e) => e.action_dim(),
        }
    }

    fn max_steps(&self) -> usize {
        match self {
            ConcreteEnv::Balancer(e) => e.max_steps(),
            ConcreteEnv::PointGoal(e) => e.max_steps(),
        }
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        match self {
            ConcreteEnv::Balancer(e) => e.reset(rng),
            ConcreteEnv::PointGoal(e) => e.reset(rng),
        }
    }

    fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<StepResult, EnvError> {
        match self {
            ConcreteEnv::Balancer(e) => e.step(action, rng),
            ConcreteEnv::PointGoal(e) => e.step(action, rng),
        }
    }
}

impl EnvConfig {
    pub fn kind(&self) -> Result<EnvKind> {
        match self.kind.as_str() {
            "balancer" => Ok(EnvKind::Balancer),
            "point-goal" | "pointgoal" => Ok(EnvKind::PointGoal),
            other => bail!("unknown env kind '{other}' (expected 'balancer' or 'point-goal')"),
        }
    }

    pub fn build_concrete(&self) -> Result<ConcreteEnv> {
        Ok(match self.kind()? {
            EnvKind::Balancer => {
                let mut cfg = BalancerConfig::default();
                if let Some(j) = self.jitter {
                    cfg.jitter = j;
                }
                ConcreteEnv::Balancer(BalancerEnv::new(cfg))
            }
            EnvKind::PointGoal => {
                let mut cfg = PointGoalConfig::default();
                if let Some(j) = self.jitter {
                    cfg.jitter = j;
                }
                ConcreteEnv::PointGoal(PointGoalEnv::new(cfg))
            }
        })
    }

    pub fn build(&self) -> Result<Box<dyn Env>> {
        Ok(Box::new(self.build_concrete()?))
    }
}

pub fn env_from_name(name: &str) -> Result<EnvConfig> {
    let cfg = EnvConfig { kind: name.to_string(), jitter: None };
    cfg.kind()?;
    Ok(cfg)
}

/// Full benchmark configuration (the `attack-eval` subcommand input).
#[derive(Clone, Debug, Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub episodes: usize,
    pub epsilon: f64,
    #[serde(default = "default_norm")]
    pub norm: String,
    #[serde(default = "default_steps")]
    pub steps: Vec<usize>,
    pub victim: PathBuf,
    #[serde(default)]
    pub star: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub methods: Option<Vec<String>>,
    pub env: EnvConfig,
}

fn default_norm() -> String {
    "linf".into()
}

fn default_steps() -> Vec<usize> {
    vec![10, 20]
}

impl BenchmarkConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .with_context(|| format!("reading config {}", path.as_ref().display()))?;
        let mut cfg: BenchmarkConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.as_ref().display()))?;
        cfg.apply_env_overrides();
        cfg.validate()?;
        Ok(cfg)
    }

    /// `ADVRL_SEED` and `ADVRL_OUT_DIR` override the config when set.
    pub fn apply_env_overrides(&mut self) {
        if let Some(seed) = env_seed_override() {
            self.seed = seed;
        }
        if let Some(dir) = env_out_dir_override() {
            self.out_dir = dir;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            bail!("episodes must be >= 1");
        }
        if !(self.epsilon > 0.0) {
            bail!("epsilon must be > 0");
        }
        NormKind::parse(&self.norm)
            .with_context(|| format!("unknown norm '{}'", self.norm))?;
        if !self.victim.exists() {
            bail!("victim checkpoint {} does not exist", self.victim.display());
        }
        if let Some(star) = &self.star {
            if !star.exists() {
                bail!("star checkpoint {} does not exist", star.display());
            }
        }
        if let Some(methods) = &self.methods {
            for m in methods {
                AttackMethod::parse(m).with_context(|| format!("unknown method '{m}'"))?;
            }
        }
        self.env.kind()?;
        Ok(())
    }

    pub fn norm_kind(&self) -> NormKind {
        NormKind::parse(&self.norm).expect("validated")
    }

    /// Subset filter in canonical order; `None` means the full layout.
    pub fn method_filter(&self) -> Option<Vec<AttackMethod>> {
        self.methods.as_ref().map(|ms| {
            AttackMethod::ALL
                .into_iter()
                .filter(|m| ms.iter().any(|s| s == m.id()))
                .collect()
        })
    }
}

pub fn env_seed_override() -> Option<u64> {
    std::env::var("ADVRL_SEED").ok().and_then(|s| s.parse().ok())
}

pub fn env_out_dir_override() -> Option<PathBuf> {
    std::env::var("ADVRL_OUT_DIR").ok().map(PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_minimal_config() {
        let dir = std::env::temp_dir().join(format!("advrl-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let victim = dir.join("victim.json");
        std::fs::write(&victim, "{}").unwrap();
        let text = format!(
            r#"
seed = 7
episodes = 4
epsilon = 0.05
victim = "{}"
out_dir = "{}"

[env]
kind = "balancer"
"#,
            victim.display(),
            dir.display()
        );
        let cfg_path = dir.join("bench.toml");
        std::fs::write(&cfg_path, text).unwrap();
        let cfg = BenchmarkConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.norm, "linf");
        assert_eq!(cfg.steps, vec![10, 20]);
        assert_eq!(cfg.env.kind().unwrap(), EnvKind::Balancer);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_unknown_methods_and_envs() {
        assert!(env_from_name("balancer").is_ok());
        assert!(env_from_name("hexapod").is_err());
    }
}
