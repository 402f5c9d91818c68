//! Gradient-based state-perturbation attacks: one parameterized iterative
//! engine covering FGSM, PGD and their momentum / Nesterov / input-diversity
//! / random-start / KL-loss / expectation-over-transformation variants, plus
//! a uniform random-noise baseline. All attacks operate on the normalized
//! observation vector and respect an L∞ or L2 budget via projection.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Bindings, GraphError, NodeId};
use crate::nets::GaussianPolicy;
use crate::rng::Rng;
use crate::{Graph, Tensor};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack spec: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Coordinate-dropout keep probability for the input-diversity transform
/// (vector-state analog of random resize/pad).
const DIVERSITY_KEEP_P: f64 = 0.9;
/// Jitter scale (fraction of ε) added by the input-diversity transform.
const DIVERSITY_JITTER_FRAC: f64 = 0.05;
/// Gaussian jitter scale (fraction of ε) for expectation-over-transformation
/// gradient averaging.
const EOT_JITTER_FRAC: f64 = 0.25;
/// Default scale of the Gaussian probe added to every gradient-evaluation
/// point. The frozen-action loss is stationary exactly at the clean state
/// (the log density peaks at the mean action), so zero-initialized attacks
/// would otherwise see a zero gradient forever; the probe restores a usable
/// sign direction.
pub const GRAD_PROBE_STD: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Random,
    Fgsm,
    Di2Fgsm,
    MiFgsm,
    NiFgsm,
    RFgsm,
    Pgd,
    Tpgd,
    EotPgd,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 9] = [
        AttackMethod::Random,
        AttackMethod::Fgsm,
        AttackMethod::Di2Fgsm,
        AttackMethod::MiFgsm,
        AttackMethod::NiFgsm,
        AttackMethod::RFgsm,
        AttackMethod::Pgd,
        AttackMethod::Tpgd,
        AttackMethod::EotPgd,
    ];

    /// Config-file identifier.
    pub fn id(self) -> &'static str {
        match self {
            AttackMethod::Random => "random",
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Di2Fgsm => "di2fgsm",
            AttackMethod::MiFgsm => "mifgsm",
            AttackMethod::NiFgsm => "nifgsm",
            AttackMethod::RFgsm => "rfgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::Tpgd => "tpgd",
            AttackMethod::EotPgd => "eotpgd",
        }
    }

    /// Human-readable table name.
    pub fn display_name(self) -> &'static str {
        match self {
            AttackMethod::Random => "Random",
            AttackMethod::Fgsm => "FGSM",
            AttackMethod::Di2Fgsm => "DI2-FGSM",
            AttackMethod::MiFgsm => "MI-FGSM",
            AttackMethod::NiFgsm => "NI-FGSM",
            AttackMethod::RFgsm => "R+FGSM",
            AttackMethod::Pgd => "PGD",
            AttackMethod::Tpgd => "TPGD",
            AttackMethod::EotPgd => "EOTPGD",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.id() == s)
    }

    /// Single-step methods take exactly one gradient step.
    pub fn single_step(self) -> bool {
        matches!(self, AttackMethod::Random | AttackMethod::Fgsm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Linf,
    L2,
}

impl NormKind {
    pub fn id(self) -> &'static str {
        match self {
            NormKind::Linf => "linf",
            NormKind::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linf" => Some(NormKind::Linf),
            "l2" => Some(NormKind::L2),
            _ => None,
        }
    }

    pub fn norm_of(self, eta: &[f64]) -> f64 {
        match self {
            NormKind::Linf => eta.iter().fold(0.0_f64, |a, &b| a.max(b.abs())),
            NormKind::L2 => eta.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// Full description of one gradient attack.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    pub norm: NormKind,
    pub epsilon: f64,
    pub steps: usize,
    /// Per-iteration step size; defaults to `ε / steps`.
    pub step_size: Option<f64>,
    /// Random-start scale. Defaults: `ε/2` for R+FGSM, `1e-4` for the
    /// PGD family, `0` otherwise.
    pub init_scale: Option<f64>,
    /// Momentum decay for MI-/NI-FGSM.
    pub momentum_decay: f64,
    /// Gradient samples per step for EOTPGD.
    pub eot_samples: usize,
    /// Per-step probability of applying the input-diversity transform
    /// (DI²-FGSM).
    pub diversity_prob: f64,
    /// Scale of the probe noise on gradient-evaluation points; defaults to
    /// [`GRAD_PROBE_STD`]. Zero disables probing.
    pub grad_probe: Option<f64>,
}

impl AttackSpec {
    pub fn new(method: AttackMethod, norm: NormKind, epsilon: f64, steps: usize) -> Self {
        Self {
            method,
            norm,
            epsilon,
            steps,
            step_size: None,
            init_scale: None,
            momentum_decay: 1.0,
            eot_samples: 4,
            diversity_prob: 0.5,
            grad_probe: None,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / self.steps as f64)
    }

    pub fn grad_probe(&self) -> f64 {
        self.grad_probe.unwrap_or(GRAD_PROBE_STD)
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale.unwrap_or(match self.method {
            AttackMethod::RFgsm => self.epsilon / 2.0,
            AttackMethod::Pgd | AttackMethod::Tpgd | AttackMethod::EotPgd => 1e-4,
            _ => 0.0,
        })
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon > 0.0) {
            return Err(AttackError::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(AttackError::Config("steps must be >= 1".into()));
        }
        if self.method.single_step() && self.steps != 1 {
            return Err(AttackError::Config(format!(
                "{} is single-step but steps = {}",
                self.method.id(),
                self.steps
            )));
        }
        if self.method == AttackMethod::EotPgd && self.eot_samples == 0 {
            return Err(AttackError::Config("eot_samples must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.diversity_prob) {
            return Err(AttackError::Config("diversity_prob must be in [0,1]".into()));
        }
        if self.momentum_decay < 0.0 {
            return Err(AttackError::Config("momentum_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// A budget-conforming perturbation in normalized-observation units.
#[derive(Clone, Debug)]
pub struct Perturbation {
    pub eta: Vec<f64>,
    pub norm_used: f64,
}

/// Projects `eta` into the ε-ball: componentwise clamp for L∞, radial
/// rescale for L2.
pub fn project(eta: &[f64], norm: NormKind, epsilon: f64) -> Vec<f64> {
    match norm {
        NormKind::Linf => eta.iter().map(|v| v.clamp(-epsilon, epsilon)).collect(),
        NormKind::L2 => {
            let n = NormKind::L2.norm_of(eta);
            if n > epsilon && n > 0.0 {
                let scale = epsilon / n;
                eta.iter().map(|v| v * scale).collect()
            } else {
                eta.to_vec()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `-log μ(a*|s_perturbed)` with `a*` frozen to the mean action at the
    /// clean state.
    NegLogProb,
    /// Closed-form `KL(μ(·|s_clean) ‖ μ(·|s_perturbed))` for diagonal
    /// Gaussians with shared (state-independent) log-std.
    Kl,
}

/// Differentiable attack loss for one clean state: a reusable graph whose
/// only rebindable input is the perturbed state.
pub struct AttackLoss {
    graph: Graph,
    state: NodeId,
    bindings: Bindings<f64>,
}

impl AttackLoss {
    pub fn build(policy: &GaussianPolicy, s_clean: &[f64], kind: LossKind) -> Self {
        let mut g = Graph::new();
        let state = g.leaf("state", true);
        let nodes = policy.net.build(&mut g, state, false, "policy");
        let mean_clean = policy.mean(s_clean);
        let (out, consts) = match kind {
            LossKind::NegLogProb => {
                let log_std = g.leaf("log_std", false);
                let a_star = g.leaf("a_star", false);
                let logp = g.gaussian_log_prob(nodes.output, log_std, a_star);
                let out = g.neg(logp);
                let consts = vec![
                    (log_std, policy.log_std.clone()),
                    (a_star, Tensor::vector(mean_clean)),
                ];
                (out, consts)
            }
            LossKind::Kl => {
                let m_clean = g.leaf("mean_clean", false);
                let inv_two_var = g.leaf("inv_two_var", false);
                let diff = g.sub(m_clean, nodes.output);
                let sq = g.mul(diff, diff);
                let w = g.mul(sq, inv_two_var);
                let out = g.sum(w);
                let inv: Vec<f64> = policy
                    .log_std
                    .data()
                    .iter()
                    .map(|ls| 1.0 / (2.0 * (2.0 * ls).exp()))
                    .collect();
                let consts = vec![
                    (m_clean, Tensor::vector(mean_clean)),
                    (inv_two_var, Tensor::vector(inv)),
                ];
                (out, consts)
            }
        };
        g.set_output(out);

        let mut bindings = g.bindings();
        policy.net.bind_params(&mut bindings, &nodes);
        for (id, t) in consts {
            bindings.set(id, t);
        }
        Self { graph: g, state, bindings }
    }

    /// Loss value at a perturbed state.
    pub fn value(&mut self, s_perturbed: &[f64]) -> Result<f64, AttackError> {
        self.bindings.set(self.state, Tensor::vector(s_perturbed.to_vec()));
        Ok(self.graph.evaluate(&self.bindings)?.output().item())
    }

    /// Loss value and its gradient with respect to the perturbed state.
    pub fn value_and_grad(&mut self, s_perturbed: &[f64]) -> Result<(f64, Vec<f64>), AttackError> {
        self.bindings.set(self.state, Tensor::vector(s_perturbed.to_vec()));
        let eval = self.graph.evaluate(&self.bindings)?;
        let value = eval.output().item();
        let grads = eval.backward_scalar()?;
        let grad = grads.leaf(self.state).expect("state leaf is differentiable").data().to_vec();
        Ok((value, grad))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient at `point` plus a small Gaussian probe (one draw per coordinate).
fn probed_grad(
    loss: &mut AttackLoss,
    point: &[f64],
    probe: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>, AttackError> {
    if probe > 0.0 {
        let p: Vec<f64> =
            point.iter().map(|v| v + probe * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(loss.value_and_grad(&p)?.1)
    } else {
        Ok(loss.value_and_grad(point)?.1)
    }
}

/// Step direction under the budget norm: componentwise sign for L∞,
/// L2-normalized gradient for L2 (zero gradients yield a zero direction).
fn direction(raw: &[f64], norm: NormKind) -> Vec<f64> {
    match norm {
        NormKind::Linf => raw.iter().map(|&v| sign(v)).collect(),
        NormKind::L2 => {
            let n = NormKind::L2.norm_of(raw);
            if n > 0.0 {
                raw.iter().map(|v| v / n).collect()
            } else {
                vec![0.0; raw.len()]
            }
        }
    }
}

/// Runs the attack described by `spec` against `policy` at normalized state
/// `s`, returning a perturbation whose norm respects the budget.
pub fn run_attack(
    spec: &AttackSpec,
    policy: &GaussianPolicy,
    s: &[f64],
    rng: &mut Rng,
) -> Result<Perturbation, AttackError> {
    run_attack_traced(spec, policy, s, rng).map(|(p, _)| p)
}

/// Like [`run_attack`] but also returns the loss at the start of every
/// iteration plus the final loss (useful for monotonicity diagnostics).
pub fn run_attack_traced(
    spec: &AttackSpec,
    policy: &GaussianPolicy,
    s: &[f64],
    rng: &mut Rng,
) -> Result<(Perturbation, Vec<f64>), AttackError> {
    spec.validate()?;
    let d = s.len();

    if spec.method == AttackMethod::Random {
        let eta = match spec.norm {
            NormKind::Linf => {
                (0..d).map(|_| spec.epsilon * rng.random_range(-1.0..=1.0)).collect::<Vec<f64>>()
            }
            NormKind::L2 => {
                // uniform in the L2 ball: gaussian direction, radius ~ ε·U^{1/d}
                let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let n = NormKind::L2.norm_of(&dir).max(1e-300);
                let radius = spec.epsilon * rng.random::<f64>().powf(1.0 / d as f64);
                dir.iter().map(|v| v / n * radius).collect()
            }
        };
        let eta = project(&eta, spec.norm, spec.epsilon);
        let norm_used = spec.norm.norm_of(&eta);
        return Ok((Perturbation { eta, norm_used }, Vec::new()));
    }

    let kind = if spec.method == AttackMethod::Tpgd { LossKind::Kl } else { LossKind::NegLogProb };
    let mut loss = AttackLoss::build(policy, s, kind);
    let step = spec.step_size();
    let init = spec.init_scale();

    let mut eta = vec![0.0; d];
    if init != 0.0 {
        match spec.method {
            AttackMethod::RFgsm => {
                for e in eta.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *e = init * sign(z);
                }
            }
            AttackMethod::Pgd | AttackMethod::Tpgd | AttackMethod::EotPgd => {
                for e in eta.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *e = init * z;
                }
            }
            _ => {}
        }
        eta = project(&eta, spec.norm, spec.epsilon);
    }

    let mut momentum = vec![0.0; d];
    let mut trace = Vec::with_capacity(spec.steps + 1);
    let probe = spec.grad_probe();

    for _ in 0..spec.steps {
        let s_p: Vec<f64> = s.iter().zip(&eta).map(|(a, b)| a + b).collect();
        trace.push(loss.value(&s_p)?);

        let grad = match spec.method {
            AttackMethod::Di2Fgsm => {
                if rng.random::<f64>() < spec.diversity_prob {
                    // Input diversity: coordinate dropout + small jitter;
                    // the chain rule through the dropout mask keeps dropped
                    // coordinates out of the gradient.
                    let keep: Vec<f64> = (0..d)
                        .map(|_| if rng.random::<f64>() < DIVERSITY_KEEP_P { 1.0 } else { 0.0 })
                        .collect();
                    let jitter_scale = DIVERSITY_JITTER_FRAC * spec.epsilon;
                    let s_t: Vec<f64> = (0..d)
                        .map(|i| {
                            let z: f64 = rng.sample(StandardNormal);
                            s_p[i] * keep[i] + jitter_scale * z
                        })
                        .collect();
                    let g = probed_grad(&mut loss, &s_t, probe, rng)?;
                    g.iter().zip(&keep).map(|(gi, ki)| gi * ki).collect()
                } else {
                    probed_grad(&mut loss, &s_p, probe, rng)?
                }
            }
            AttackMethod::EotPgd => {
                let jitter = EOT_JITTER_FRAC * spec.epsilon;
                let mut acc = vec![0.0; d];
                for _ in 0..spec.eot_samples {
                    let s_j: Vec<f64> = s_p
                        .iter()
                        .map(|v| v + jitter * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let g = probed_grad(&mut loss, &s_j, probe, rng)?;
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                acc.iter_mut().for_each(|v| *v /= spec.eot_samples as f64);
                acc
            }
            AttackMethod::NiFgsm => {
                // Nesterov lookahead along the accumulated momentum.
                let s_nes: Vec<f64> = (0..d)
                    .map(|i| s_p[i] + step * spec.momentum_decay * momentum[i])
                    .collect();
                probed_grad(&mut loss, &s_nes, probe, rng)?
            }
            _ => probed_grad(&mut loss, &s_p, probe, rng)?,
        };

        let raw: Vec<f64> = match spec.method {
            AttackMethod::MiFgsm | AttackMethod::NiFgsm => {
                let l1: f64 = grad.iter().map(|v| v.abs()).sum();
                for i in 0..d {
                    let normalized = if l1 > 0.0 { grad[i] / l1 } else { 0.0 };
                    momentum[i] = spec.momentum_decay * momentum[i] + normalized;
                }
                momentum.clone()
            }
            _ => grad,
        };

        let dir = direction(&raw, spec.norm);
        for i in 0..d {
            eta[i] += step * dir[i];
        }
        eta = project(&eta, spec.norm, spec.epsilon);
    }
    let s_final: Vec<f64> = s.iter().zip(&eta).map(|(a, b)| a + b).collect();
    trace.push(loss.value(&s_final)?);

    let norm_used = spec.norm.norm_of(&eta);
    Ok((Perturbation { eta, norm_used }, trace))
}
