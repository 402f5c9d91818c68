//! Versioned JSON checkpoints for victims and STAR agents.
//!
//! Layout (version 1): a top-level object with `version`, `kind`
//! ("victim" | "star"), and flat per-layer parameter arrays. MLPs serialize
//! as `{ sizes, weights, biases }` where `weights[i]` is the row-major
//! `[out × in]` matrix of layer `i` and `biases[i]` its bias vector.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::{AffineLayer, GaussianPolicy, MaskNet, Mlp, ValueNet};
use crate::norm::ObsNormalizer;
use crate::ppo::Victim;
use crate::star::{EntropySign, StarAgent, StarConfig};
use crate::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint kind '{got}' does not match expected '{want}'")]
    Kind { got: String, want: String },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn from_mlp(mlp: &Mlp) -> Self {
        Self {
            sizes: mlp.sizes(),
            weights: mlp.layers().iter().map(|l| l.w.data().to_vec()).collect(),
            biases: mlp.layers().iter().map(|l| l.b.data().to_vec()).collect(),
        }
    }

    pub fn into_mlp(self) -> Result<Mlp, CheckpointError> {
        if self.sizes.len() < 2
            || self.weights.len() != self.sizes.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(CheckpointError::Inconsistent("layer count mismatch".into()));
        }
        let mut layers = Vec::new();
        for (i, win) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (win[0], win[1]);
            if self.weights[i].len() != fan_in * fan_out || self.biases[i].len() != fan_out {
                return Err(CheckpointError::Inconsistent(format!(
                    "layer {i} has wrong parameter count"
                )));
            }
            layers.push(AffineLayer {
                w: Tensor::matrix(fan_out, fan_in, self.weights[i].clone()),
                b: Tensor::vector(self.biases[i].clone()),
            });
        }
        Ok(Mlp::from_layers(layers))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormParams {
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub count: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VictimCheckpoint {
    pub version: u32,
    pub kind: String,
    pub env: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub policy: MlpParams,
    pub log_std: Vec<f64>,
    pub value: MlpParams,
    pub obs_norm: NormParams,
}

impl VictimCheckpoint {
    pub fn from_victim(victim: &Victim, env: &str) -> Self {
        let (mean, m2, count) = victim.norm.raw_parts();
        Self {
            version: CHECKPOINT_VERSION,
            kind: "victim".into(),
            env: env.into(),
            obs_dim: victim.policy.obs_dim(),
            action_dim: victim.policy.action_dim(),
            policy: MlpParams::from_mlp(&victim.policy.net),
            log_std: victim.policy.log_std.data().to_vec(),
            value: MlpParams::from_mlp(&victim.value.net),
            obs_norm: NormParams { mean, m2, count },
        }
    }

    pub fn into_victim(self) -> Result<Victim, CheckpointError> {
        check_header(self.version, &self.kind, "victim")?;
        let policy_net = self.policy.into_mlp()?;
        if self.log_std.len() != policy_net.out_dim() {
            return Err(CheckpointError::Inconsistent("log_std length mismatch".into()));
        }
        Ok(Victim {
            policy: GaussianPolicy { net: policy_net, log_std: Tensor::vector(self.log_std) },
            value: ValueNet { net: self.value.into_mlp()? },
            norm: ObsNormalizer::from_raw_parts(
                self.obs_norm.mean,
                self.obs_norm.m2,
                self.obs_norm.count,
            ),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        read_json(path)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StarCheckpoint {
    pub version: u32,
    pub kind: String,
    pub obs_dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub sigma_probe: f64,
    pub tau: f64,
    pub lr: f64,
    pub gamma: f64,
    pub entropy_sign: String,
    pub batch: usize,
    pub epochs: usize,
    pub mask: MlpParams,
    pub adv_value: MlpParams,
}

impl StarCheckpoint {
    pub fn from_agent(agent: &StarAgent) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: "star".into(),
            obs_dim: agent.mask.net.in_dim(),
            alpha: agent.cfg.alpha,
            beta: agent.cfg.beta,
            epsilon: agent.cfg.epsilon,
            sigma_probe: agent.cfg.sigma_probe,
            tau: agent.cfg.tau,
            lr: agent.cfg.lr,
            gamma: agent.cfg.gamma,
            entropy_sign: match agent.cfg.entropy_sign {
                EntropySign::MinimizeEntropy => "minimize".into(),
                EntropySign::MaximizeEntropy => "maximize".into(),
            },
            batch: agent.cfg.batch,
            epochs: agent.cfg.epochs,
            mask: MlpParams::from_mlp(&agent.mask.net),
            adv_value: MlpParams::from_mlp(&agent.adv_value.net),
        }
    }

    pub fn into_agent(self) -> Result<StarAgent, CheckpointError> {
        check_header(self.version, &self.kind, "star")?;
        let entropy_sign = match self.entropy_sign.as_str() {
            "minimize" => EntropySign::MinimizeEntropy,
            "maximize" => EntropySign::MaximizeEntropy,
            other => {
                return Err(CheckpointError::Inconsistent(format!(
                    "unknown entropy_sign '{other}'"
                )))
            }
        };
        let mask_net = self.mask.into_mlp()?;
        let value_net = self.adv_value.into_mlp()?;
        let cfg = StarConfig {
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
            sigma_probe: self.sigma_probe,
            tau: self.tau,
            lr: self.lr,
            gamma: self.gamma,
            entropy_sign,
            batch: self.batch,
            epochs: self.epochs,
            mask_hidden: mask_net.sizes()[1..mask_net.sizes().len() - 1].to_vec(),
            value_hidden: value_net.sizes()[1..value_net.sizes().len() - 1].to_vec(),
        };
        Ok(StarAgent {
            mask: MaskNet { net: mask_net, tau: self.tau },
            adv_value: ValueNet { net: value_net },
            cfg,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        read_json(path)
    }
}

fn check_header(version: u32, kind: &str, want: &str) -> Result<(), CheckpointError> {
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    if kind != want {
        return Err(CheckpointError::Kind { got: kind.into(), want: want.into() });
    }
    Ok(())
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), CheckpointError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path.as_ref(), text).map_err(|source| CheckpointError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T, CheckpointError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|source| CheckpointError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;
    use crate::star::StarConfig;

    #[test]
    fn victim_roundtrip_is_exact() {
        let mut rng = seed_rng(1);
        let mut victim = Victim::new(5, 2, &[8, 8], &mut rng);
        victim.norm.update(&[1.0, -2.0, 0.5, 3.0, 0.0]);
        victim.norm.update(&[0.0, 1.0, -0.5, 2.0, 4.0]);
        let ck = VictimCheckpoint::from_victim(&victim, "balancer");
        let text = serde_json::to_string(&ck).unwrap();
        let back: VictimCheckpoint = serde_json::from_str(&text).unwrap();
        let restored = back.into_victim().unwrap();
        for (a, b) in victim.policy.params().iter().zip(restored.policy.params()) {
            assert_eq!(a.data(), b.data());
        }
        let s = [0.3, 0.1, -0.9, 0.2, 0.7];
        assert_eq!(victim.norm.normalize(&s), restored.norm.normalize(&s));
        assert_eq!(victim.value.value(&s), restored.value.value(&s));
    }

    #[test]
    fn star_roundtrip_preserves_config() {
        let mut rng = seed_rng(2);
        let agent = StarAgent::new(7, StarConfig::new(0.025), &mut rng).unwrap();
        let ck = StarCheckpoint::from_agent(&agent);
        let text = serde_json::to_string(&ck).unwrap();
        let restored: StarCheckpoint = serde_json::from_str(&text).unwrap();
        let agent2 = restored.into_agent().unwrap();
        assert_eq!(agent2.cfg.beta, 0.75);
        assert_eq!(agent2.cfg.epsilon, 0.025);
        assert_eq!(agent2.cfg.alpha, 2e-4);
        let s = [0.1, 0.2, 0.3, -0.1, -0.2, -0.3, 0.0];
        assert_eq!(agent.mask.probs(&s), agent2.mask.probs(&s));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let mut rng = seed_rng(3);
        let victim = Victim::new(3, 1, &[4], &mut rng);
        let mut ck = VictimCheckpoint::from_victim(&victim, "x");
        ck.kind = "star".into();
        assert!(matches!(ck.into_victim(), Err(CheckpointError::Kind { .. })));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut rng = seed_rng(4);
        let victim = Victim::new(3, 1, &[4], &mut rng);
        let mut ck = VictimCheckpoint::from_victim(&victim, "x");
        ck.version = 99;
        assert!(matches!(ck.into_victim(), Err(CheckpointError::Version(99))));
    }
}
