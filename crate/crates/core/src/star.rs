//! STAR selective state-aware adversary: soft-mask-modulated sign-gradient
//! perturbations, an entropy-regularized return-minimization objective, and
//! an on-policy training loop against a frozen victim.
//!
//! Per step the adversary samples hard mask branches from the mask network
//! (logistic-noise sampling at temperature τ), interpolates them into a soft
//! mask, and emits `η = ε · M_soft(s) ⊙ sign(∇_s J(s', a))` where `s'` is a
//! ς-jittered probe of the clean state and `a` the victim's mean action
//! there. The mask network is trained by score-function ascent on the
//! adversary advantage plus a likelihood regularizer; the value network
//! regresses plain discounted returns (λ = 1).

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::attacks::{AttackError, AttackLoss, LossKind};
use crate::autodiff::{GraphError, NodeId};
use crate::envs::{reward_adversary, Env, EnvError};
use crate::nets::{mask_log_likelihood, soft_mask, MaskNet, NetError, ValueNet};
use crate::opt::Adam;
use crate::ppo::Victim;
use crate::rng::{substream, Rng};
use crate::{Graph, Tensor};

#[derive(Debug, Error)]
pub enum StarError {
    #[error("invalid STAR config: {0}")]
    Config(String),
    #[error("episode has no transitions")]
    IncompleteEpisode,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Which sign the likelihood (entropy) regularizer takes in the mask
/// objective. `MinimizeEntropy` matches the information-theoretic objective
/// (concentrate the adversarial policy); `MaximizeEntropy` is the literal
/// reading of the training-loop line that minimizes `Â + α·log(μν)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntropySign {
    MinimizeEntropy,
    MaximizeEntropy,
}

#[derive(Clone, Debug)]
pub struct StarConfig {
    /// Entropy weight coefficient α.
    pub alpha: f64,
    /// Soft-mask interpolation factor β.
    pub beta: f64,
    /// Perturbation budget ε.
    pub epsilon: f64,
    /// Probe-noise scaling factor ς.
    pub sigma_probe: f64,
    /// Mask temperature τ.
    pub tau: f64,
    pub lr: f64,
    pub gamma: f64,
    pub entropy_sign: EntropySign,
    pub batch: usize,
    pub epochs: usize,
    pub mask_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
}

impl StarConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            alpha: 2e-4,
            beta: 0.75,
            epsilon,
            sigma_probe: 1e-4,
            tau: 1.0,
            lr: 3e-4,
            gamma: 0.998,
            entropy_sign: EntropySign::MinimizeEntropy,
            batch: 64,
            epochs: 4,
            mask_hidden: vec![64, 64, 64],
            value_hidden: vec![64, 64, 64],
        }
    }

    pub fn validate(&self) -> Result<(), StarError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(StarError::Config(format!("alpha must be in (0,1], got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(StarError::Config(format!("beta must be in (0,1), got {}", self.beta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(StarError::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// The STAR adversary: mask network + adversary value network.
#[derive(Clone, Debug)]
pub struct StarAgent {
    pub mask: MaskNet,
    pub adv_value: ValueNet,
    pub cfg: StarConfig,
}

impl StarAgent {
    pub fn new(obs_dim: usize, cfg: StarConfig, rng: &mut Rng) -> Result<Self, StarError> {
        cfg.validate()?;
        Ok(Self {
            mask: MaskNet::new(obs_dim, &cfg.mask_hidden, cfg.tau, rng),
            adv_value: ValueNet::new(obs_dim, &cfg.value_hidden, rng),
            cfg,
        })
    }
}

/// Output of one perturbation call.
#[derive(Clone, Debug)]
pub struct StarPerturbation {
    pub eta: Vec<f64>,
    /// Sampled hard mask branches (training mode) or empty (eval mode).
    pub mask_branch: Vec<f64>,
    /// Mask probabilities `m(s)`.
    pub mask_probs: Vec<f64>,
    pub soft_mask: Vec<f64>,
    /// Factorized mask log-likelihood of the sampled branches; 0 in eval mode.
    pub log_nu: f64,
    /// Set when a non-finite gradient forced a zero perturbation.
    pub degraded: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Sample hard branches with logistic noise (training).
    Sampled,
    /// Use the continuous probabilities directly (deterministic evaluation).
    Deterministic,
}

/// Generates the STAR perturbation at normalized state `s`:
/// `η = ε·M_soft ⊙ sign(∇_{s'} J)` with `s' = s + ς·N(0, I)` resampled per
/// call and `J` the frozen-action attack loss. A non-finite gradient yields
/// a zero perturbation flagged as degraded rather than an error.
pub fn star_perturb(
    agent: &StarAgent,
    victim_policy: &crate::nets::GaussianPolicy,
    s: &[f64],
    mode: MaskMode,
    rng: &mut Rng,
) -> Result<StarPerturbation, StarError> {
    let d = s.len();
    let (branch, probs) = match mode {
        MaskMode::Sampled => {
            let (b, m) = agent.mask.sample_branches(s, rng);
            (b, m)
        }
        MaskMode::Deterministic => {
            let m = agent.mask.probs(s);
            (Vec::new(), m)
        }
    };
    let mask_basis: &[f64] = if branch.is_empty() { &probs } else { &branch };
    let soft = soft_mask(mask_basis, agent.cfg.beta)?;

    let probe: Vec<f64> = s
        .iter()
        .map(|v| v + agent.cfg.sigma_probe * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut loss = AttackLoss::build(victim_policy, s, LossKind::NegLogProb);
    let (eta, degraded) = match loss.value_and_grad(&probe) {
        Ok((_, grad)) => {
            let eta: Vec<f64> = (0..d)
                .map(|i| {
                    let sign = if grad[i] > 0.0 {
                        1.0
                    } else if grad[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    (agent.cfg.epsilon * soft[i]) * sign
                })
                .collect();
            (eta, false)
        }
        Err(_) => (vec![0.0; d], true),
    };

    let log_nu =
        if branch.is_empty() { 0.0 } else { mask_log_likelihood(&branch, &probs) };
    Ok(StarPerturbation {
        eta,
        mask_branch: branch,
        mask_probs: probs,
        soft_mask: soft,
        log_nu,
        degraded,
    })
}

/// One stored adversary step. Returns and advantages are absent until the
/// episode is finalized by [`star_returns`].
#[derive(Clone, Debug)]
pub struct StarTransition {
    pub s: Vec<f64>,
    pub eta: Vec<f64>,
    pub mask_branch: Vec<f64>,
    pub mask_probs: Vec<f64>,
    pub log_nu: f64,
    pub victim_action: Vec<f64>,
    pub log_mu: f64,
    pub reward_adv: f64,
    pub value_pred: f64,
    pub ret: Option<f64>,
    pub advantage: Option<f64>,
    /// First step of an episode uses the uniform prior, not the mask.
    pub from_prior: bool,
}

/// Fills `R̂_t = Σ_k γ^k·r_{t+k} + γ^{T-t}·V(s_T)` and `Â_t = R̂_t - V(s_t)`
/// by direct summation (λ = 1 semantics). True terminals bootstrap zero;
/// truncated episodes bootstrap the supplied `bootstrap` value.
pub fn star_returns(
    transitions: &mut [StarTransition],
    terminal: bool,
    bootstrap: f64,
    gamma: f64,
) -> Result<(), StarError> {
    if transitions.is_empty() {
        return Err(StarError::IncompleteEpisode);
    }
    let t_len = transitions.len();
    let tail = if terminal { 0.0 } else { bootstrap };
    for t in 0..t_len {
        let mut acc = 0.0;
        let mut disc = 1.0;
        for step in &transitions[t..] {
            acc += disc * step.reward_adv;
            disc *= gamma;
        }
        acc += disc * tail;
        transitions[t].ret = Some(acc);
        transitions[t].advantage = Some(acc - transitions[t].value_pred);
    }
    Ok(())
}

/// One gradient step of the adversary value network on a batch; returns the
/// pre-step mean squared error.
pub fn star_value_update(
    agent: &mut StarAgent,
    batch: &[&StarTransition],
    adam: &mut Adam,
) -> Result<f64, StarError> {
    let n = batch.len();
    if n == 0 {
        return Err(StarError::IncompleteEpisode);
    }
    let obs_dim = agent.adv_value.net.in_dim();
    let mut g = Graph::new();
    let states = g.leaf("states", false);
    let targets = g.leaf("targets", false);
    let nodes = agent.adv_value.net.build(&mut g, states, true, "adv_value");
    let loss = g.squared_error(nodes.output, targets);
    g.set_output(loss);

    let mut flat = Vec::with_capacity(n * obs_dim);
    let mut tgt = Vec::with_capacity(n);
    for t in batch {
        flat.extend_from_slice(&t.s);
        tgt.push(t.ret.ok_or(StarError::IncompleteEpisode)?);
    }
    let mut bind = g.bindings();
    bind.set(states, Tensor::matrix(n, obs_dim, flat));
    bind.set(targets, Tensor::matrix(n, 1, tgt));
    agent.adv_value.net.bind_params(&mut bind, &nodes);

    let eval = g.evaluate(&bind)?;
    let loss_value = eval.output().item();
    if !loss_value.is_finite() {
        return Err(StarError::Diverged(format!("value loss {loss_value}")));
    }
    let grads_map = eval.backward_scalar()?;
    let grads: Vec<Tensor> = nodes
        .params
        .iter()
        .map(|id| grads_map.leaf(*id).expect("trainable leaf").clone())
        .collect();
    let mut params = agent.adv_value.net.params_mut();
    adam.step(agent.cfg.lr, &mut params, &grads);
    Ok(loss_value)
}

/// Reusable mask-objective graph for a fixed batch size.
struct MaskGraph {
    graph: Graph,
    states: NodeId,
    branches: NodeId,
    inv_branches: NodeId,
    advantages: NodeId,
    log_mu: NodeId,
    mask_nodes: crate::nets::MlpNodes,
}

fn build_mask_graph(agent: &StarAgent) -> MaskGraph {
    let cfg = &agent.cfg;
    let mut g = Graph::new();
    let states = g.leaf("states", false);
    let branches = g.leaf("branches", false);
    let inv_branches = g.leaf("inv_branches", false);
    let advantages = g.leaf("advantages", false);
    let log_mu = g.leaf("log_mu", false);

    let mask_nodes = agent.mask.net.build(&mut g, states, true, "mask");
    let z = g.mul_scalar(mask_nodes.output, 1.0 / cfg.tau);
    // log m = -log(1 + e^{-z}), log(1-m) = -log(1 + e^{z}) (stable softplus forms)
    let nz = g.neg(z);
    let log_m = {
        let e = g.exp(nz);
        let e1 = g.add_scalar(e, 1.0);
        let l = g.log(e1);
        g.neg(l)
    };
    let log_1m = {
        let e = g.exp(z);
        let e1 = g.add_scalar(e, 1.0);
        let l = g.log(e1);
        g.neg(l)
    };
    let lhs = g.mul(branches, log_m);
    let rhs = g.mul(inv_branches, log_1m);
    let terms = g.add(lhs, rhs);
    let log_nu = g.row_sum(terms);

    // score-function term: -E[log ν · Â]
    let score = g.mul(log_nu, advantages);
    let neg_score = g.neg(score);

    // likelihood regularizer: ∓α·(log μ + log ν)
    let joint = g.add(log_nu, log_mu);
    let coeff = match cfg.entropy_sign {
        EntropySign::MinimizeEntropy => -cfg.alpha,
        EntropySign::MaximizeEntropy => cfg.alpha,
    };
    let reg = g.mul_scalar(joint, coeff);

    let per_sample = g.add(neg_score, reg);
    let objective = g.mean(per_sample);
    g.set_output(objective);
    MaskGraph { graph: g, states, branches, inv_branches, advantages, log_mu, mask_nodes }
}

/// One gradient step on the mask network, minimizing
/// `E[-log ν·Â ∓ α·(log μ + log ν)]` with batch-normalized advantages.
/// Returns the pre-step objective.
pub fn star_policy_update(
    agent: &mut StarAgent,
    batch: &[&StarTransition],
    adam: &mut Adam,
) -> Result<f64, StarError> {
    let usable: Vec<&&StarTransition> = batch.iter().filter(|t| !t.from_prior).collect();
    let n = usable.len();
    if n == 0 {
        return Err(StarError::IncompleteEpisode);
    }
    let obs_dim = agent.mask.net.in_dim();
    let d = agent.mask.net.out_dim();

    let advantages: Vec<f64> = usable
        .iter()
        .map(|t| t.advantage.ok_or(StarError::IncompleteEpisode))
        .collect::<Result<_, _>>()?;
    let mean = advantages.iter().sum::<f64>() / n as f64;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let norm_adv: Vec<f64> = if std > 1e-12 {
        advantages.iter().map(|a| (a - mean) / std).collect()
    } else {
        advantages.iter().map(|a| a - mean).collect()
    };

    let mg = build_mask_graph(agent);
    let mut flat_s = Vec::with_capacity(n * obs_dim);
    let mut flat_b = Vec::with_capacity(n * d);
    let mut flat_ib = Vec::with_capacity(n * d);
    let mut lmu = Vec::with_capacity(n);
    for t in &usable {
        flat_s.extend_from_slice(&t.s);
        flat_b.extend_from_slice(&t.mask_branch);
        flat_ib.extend(t.mask_branch.iter().map(|b| 1.0 - b));
        lmu.push(t.log_mu);
    }
    let mut bind = mg.graph.bindings();
    bind.set(mg.states, Tensor::matrix(n, obs_dim, flat_s));
    bind.set(mg.branches, Tensor::matrix(n, d, flat_b));
    bind.set(mg.inv_branches, Tensor::matrix(n, d, flat_ib));
    bind.set(mg.advantages, Tensor::vector(norm_adv));
    bind.set(mg.log_mu, Tensor::vector(lmu));
    agent.mask.net.bind_params(&mut bind, &mg.mask_nodes);

    let eval = mg.graph.evaluate(&bind)?;
    let objective = eval.output().item();
    if !objective.is_finite() {
        return Err(StarError::Diverged(format!("mask objective {objective}")));
    }
    let grads_map = eval.backward_scalar()?;
    let grads: Vec<Tensor> = mg
        .mask_nodes
        .params
        .iter()
        .map(|id| grads_map.leaf(*id).expect("trainable leaf").clone())
        .collect();
    let mut params = agent.mask.net.params_mut();
    adam.step(agent.cfg.lr, &mut params, &grads);
    Ok(objective)
}

/// One row of the adversary training curve.
#[derive(Clone, Copy, Debug)]
pub struct StarCurveRow {
    pub episode: u64,
    pub adv_reward_mean: f64,
    pub value_loss: f64,
    pub mask_objective: f64,
}

/// On-policy STAR training against a frozen victim. Each episode starts with
/// a uniform-prior perturbation, rolls out under the attacked victim, then
/// runs `epochs` of value and mask updates on shuffled batches of the
/// episode's transitions.
pub fn train_star<E: Env>(
    agent: &mut StarAgent,
    victim: &Victim,
    env: &mut E,
    episodes: u64,
    seed: u64,
) -> Result<Vec<StarCurveRow>, StarError> {
    agent.cfg.validate()?;
    let mut adam_value = Adam::new();
    let mut adam_mask = Adam::new();
    let mut curve = Vec::new();

    for ep in 0..episodes {
        let mut rng = substream(seed, 0x57A2, ep);
        let mut raw = env.reset(&mut rng);
        let mut transitions: Vec<StarTransition> = Vec::new();
        let mut terminal = false;
        let mut first = true;
        let gamma = agent.cfg.gamma;
        let beta_eps = agent.cfg.beta * agent.cfg.epsilon;

        let mut last_obs_norm = victim.norm.normalize(&raw);
        while !terminal {
            let s = victim.norm.normalize(&raw);
            let (eta, branch, probs, log_nu, from_prior) = if first {
                // uniform prior over the (β-scaled) budget box
                let eta: Vec<f64> =
                    (0..s.len()).map(|_| rng.random_range(-beta_eps..=beta_eps)).collect();
                (eta, Vec::new(), Vec::new(), 0.0, true)
            } else {
                let p = star_perturb(agent, &victim.policy, &s, MaskMode::Sampled, &mut rng)?;
                (p.eta, p.mask_branch, p.mask_probs, p.log_nu, false)
            };
            first = false;

            let s_att: Vec<f64> = s.iter().zip(&eta).map(|(a, b)| a + b).collect();
            let (action, log_mu) = victim.policy.sample(&s_att, &mut rng)?;
            let res = env.step(&action, &mut rng)?;
            let r_adv = reward_adversary(res.reward);
            if !r_adv.is_finite() {
                return Err(StarError::Diverged("non-finite adversary reward".into()));
            }
            transitions.push(StarTransition {
                s: s.clone(),
                eta,
                mask_branch: branch,
                mask_probs: probs,
                log_nu,
                victim_action: action,
                log_mu,
                reward_adv: r_adv,
                value_pred: agent.adv_value.value(&s),
                ret: None,
                advantage: None,
                from_prior,
            });
            terminal = res.terminal;
            raw = res.next_state;
            last_obs_norm = victim.norm.normalize(&raw);
        }
        let bootstrap = agent.adv_value.value(&last_obs_norm);
        // Continuous episodes end either by fall (true terminal) or step cap
        // (truncation); both set the env-terminal flag, so split on the cap.
        let truncated = transitions.len() >= env.max_steps();
        star_returns(&mut transitions, !truncated, bootstrap, gamma)?;

        let adv_reward_mean =
            transitions.iter().map(|t| t.reward_adv).sum::<f64>() / transitions.len() as f64;

        let mut value_loss = 0.0;
        let mut mask_objective = 0.0;
        let mut indices: Vec<usize> = (0..transitions.len()).collect();
        for _ in 0..agent.cfg.epochs {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks(agent.cfg.batch) {
                let batch: Vec<&StarTransition> = chunk.iter().map(|&i| &transitions[i]).collect();
                value_loss = star_value_update(agent, &batch, &mut adam_value)?;
                if batch.iter().any(|t| !t.from_prior) {
                    mask_objective = star_policy_update(agent, &batch, &mut adam_mask)?;
                }
            }
        }
        curve.push(StarCurveRow { episode: ep, adv_reward_mean, value_loss, mask_objective });
    }
    Ok(curve)
}
