//! Victim training: PPO with the clipped surrogate, generalized advantage
//! estimation, a 0.5-weighted value loss, global gradient-norm clipping, and
//! a KL-adaptive learning rate.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::autodiff::{GraphError, NodeId};
use crate::envs::{Env, EnvError};
use crate::nets::{GaussianPolicy, NetError, ValueNet};
use crate::norm::ObsNormalizer;
use crate::opt::{clip_global_norm, Adam};
use crate::rng::{substream, Rng};
use crate::{Graph, Tensor};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("non-finite quantity during update: {0}")]
    NonFinite(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One stored step. Observations are the (possibly perturbed) normalized
/// observations the policy actually acted on.
#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob_old: f64,
    pub reward: f64,
    pub value_pred: f64,
    pub terminal: bool,
    pub fell: bool,
    pub velocity: f64,
}

#[derive(Clone, Debug)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    /// Initial learning rate; adapted by the KL controller within
    /// `[lr_min, lr_max]`.
    pub lr: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub max_grad_norm: f64,
    pub batch: usize,
    pub kl_target: f64,
    pub epochs: usize,
    pub rollout: usize,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.998,
            gae_lambda: 0.95,
            value_coef: 0.5,
            lr: 5e-4,
            lr_min: 1e-6,
            lr_max: 1e-2,
            max_grad_norm: 0.5,
            batch: 64,
            kl_target: 0.01,
            epochs: 10,
            rollout: 2048,
            hidden: vec![128, 128],
        }
    }
}

/// Generalized advantage estimation over one time-ordered episode segment.
///
/// `terminal` marks a true episode end (bootstrap 0); otherwise the segment
/// was truncated and `bootstrap` must be `V(s_T)`. Returns satisfy
/// `returns[t] = advantages[t] + values[t]`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminal: bool,
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    if rewards.is_empty() {
        return Err(PpoError::EmptyTrajectory);
    }
    assert_eq!(rewards.len(), values.len(), "rewards/values length mismatch");
    let t_len = rewards.len();
    let mut advantages = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        let v_next = if t + 1 < t_len {
            values[t + 1]
        } else if terminal {
            0.0
        } else {
            bootstrap
        };
        let delta = rewards[t] + gamma * v_next - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// One episode segment inside a rollout buffer.
#[derive(Clone, Debug)]
struct Segment {
    start: usize,
    end: usize,
    terminal: bool,
    bootstrap: f64,
}

/// On-policy rollout buffer with per-segment GAE.
#[derive(Clone, Debug, Default)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    segments: Vec<Segment>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    fn push_segment(&mut self, start: usize, terminal: bool, bootstrap: f64) {
        let end = self.transitions.len();
        if end > start {
            self.segments.push(Segment { start, end, terminal, bootstrap });
        }
    }

    pub fn finalize(&mut self, gamma: f64, lambda: f64) -> Result<(), PpoError> {
        self.advantages = vec![0.0; self.transitions.len()];
        self.returns = vec![0.0; self.transitions.len()];
        for seg in &self.segments {
            let rewards: Vec<f64> =
                self.transitions[seg.start..seg.end].iter().map(|t| t.reward).collect();
            let values: Vec<f64> =
                self.transitions[seg.start..seg.end].iter().map(|t| t.value_pred).collect();
            let (adv, ret) =
                compute_gae(&rewards, &values, seg.terminal, seg.bootstrap, gamma, lambda)?;
            self.advantages[seg.start..seg.end].copy_from_slice(&adv);
            self.returns[seg.start..seg.end].copy_from_slice(&ret);
        }
        Ok(())
    }
}

/// Trained victim bundle: policy, critic, and the observation normalizer the
/// policy expects its inputs to pass through.
#[derive(Clone, Debug)]
pub struct Victim {
    pub policy: GaussianPolicy,
    pub value: ValueNet,
    pub norm: ObsNormalizer,
}

impl Victim {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        Self {
            policy: GaussianPolicy::new(obs_dim, action_dim, hidden, rng),
            value: ValueNet::new(obs_dim, hidden, rng),
            norm: ObsNormalizer::new(obs_dim),
        }
    }
}

/// Observation hook: maps the normalized observation to a perturbation that
/// is added before the victim sees it. Used for adversarial training.
pub type PerturbHook<'a> = dyn FnMut(&[f64], &Victim, &mut Rng) -> Vec<f64> + 'a;

/// Collects `steps` on-policy transitions, carrying episodes across rollout
/// boundaries via truncation bootstraps. Updates the normalizer in place when
/// `update_norm` is set.
pub fn collect_rollout(
    env: &mut dyn Env,
    victim: &mut Victim,
    steps: usize,
    update_norm: bool,
    mut perturb: Option<&mut PerturbHook<'_>>,
    rng: &mut Rng,
) -> Result<Rollout, PpoError> {
    let mut rollout = Rollout::default();
    let mut seg_start = 0usize;
    let mut raw_obs = env.reset(rng);
    if update_norm {
        victim.norm.update(&raw_obs);
    }
    while rollout.len() < steps {
        let mut obs = victim.norm.normalize(&raw_obs);
        if let Some(hook) = perturb.as_deref_mut() {
            let eta = hook(&obs, victim, rng);
            for (o, e) in obs.iter_mut().zip(&eta) {
                *o += e;
            }
        }
        let (action, log_prob) = victim.policy.sample(&obs, rng)?;
        let value_pred = victim.value.value(&obs);
        let res = env.step(&action, rng)?;
        if !res.reward.is_finite() {
            return Err(PpoError::Diverged("non-finite reward".into()));
        }
        rollout.transitions.push(Transition {
            obs,
            action,
            log_prob_old: log_prob,
            reward: res.reward,
            value_pred,
            terminal: res.terminal,
            fell: res.info.fell,
            velocity: res.info.velocity,
        });
        if res.terminal {
            rollout.push_segment(seg_start, true, 0.0);
            seg_start = rollout.len();
            raw_obs = env.reset(rng);
        } else {
            raw_obs = res.next_state;
        }
        if update_norm {
            victim.norm.update(&raw_obs);
        }
    }
    // Truncate the unfinished episode with a value bootstrap.
    if rollout.len() > seg_start {
        let last_obs = victim.norm.normalize(&raw_obs);
        let bootstrap = victim.value.value(&last_obs);
        rollout.push_segment(seg_start, false, bootstrap);
    }
    Ok(rollout)
}

#[derive(Clone, Copy, Debug)]
pub struct UpdateStats {
    /// True clipped-surrogate objective (mean of the per-sample minimum).
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean `log π_old - log π_new` over the buffer after the update.
    pub kl: f64,
    /// Learning rate after KL adaptation.
    pub lr: f64,
}

/// Reusable update graph for a fixed minibatch size.
struct UpdateGraph {
    graph: Graph,
    states: NodeId,
    actions: NodeId,
    log_prob_old: NodeId,
    advantages: NodeId,
    gate: NodeId,
    targets: NodeId,
    log_std: NodeId,
    policy_nodes: crate::nets::MlpNodes,
    value_nodes: crate::nets::MlpNodes,
    value_loss: NodeId,
}

fn build_update_graph(victim: &Victim, value_coef: f64) -> UpdateGraph {
    let mut g = Graph::new();
    let states = g.leaf("states", false);
    let actions = g.leaf("actions", false);
    let log_prob_old = g.leaf("log_prob_old", false);
    let advantages = g.leaf("advantages", false);
    let gate = g.leaf("clip_gate", false);
    let targets = g.leaf("targets", false);

    let policy_nodes = victim.policy.net.build(&mut g, states, true, "policy");
    let log_std = g.leaf("log_std", true);
    let logp = g.gaussian_log_prob(policy_nodes.output, log_std, actions);
    let diff = g.sub(logp, log_prob_old);
    let ratio = g.exp(diff);
    // The clipped surrogate has gradient ratio·A wherever the minimum is the
    // unclipped branch and zero elsewhere; `gate` carries that indicator, so
    // this graph reproduces the exact gradient of mean(min(rA, clip(r)A)).
    let gated = g.mul(ratio, gate);
    let weighted = g.mul(gated, advantages);
    let surrogate = g.mean(weighted);
    let policy_loss = g.neg(surrogate);

    let value_nodes = victim.value.net.build(&mut g, states, true, "value");
    let value_loss = g.squared_error(value_nodes.output, targets);
    let scaled_value = g.mul_scalar(value_loss, value_coef);
    let total = g.add(policy_loss, scaled_value);
    g.set_output(total);

    UpdateGraph {
        graph: g,
        states,
        actions,
        log_prob_old,
        advantages,
        gate,
        targets,
        log_std,
        policy_nodes,
        value_nodes,
        value_loss,
    }
}

/// Optimizer state for one victim (policy and critic share the learning
/// rate; the KL controller adapts it between updates).
pub struct PpoOptimizer {
    pub adam_policy: Adam,
    pub adam_value: Adam,
    pub lr: f64,
}

impl PpoOptimizer {
    pub fn new(lr: f64) -> Self {
        Self { adam_policy: Adam::new(), adam_value: Adam::new(), lr }
    }
}

/// One PPO update over a finalized rollout: epochs of shuffled minibatches,
/// advantage normalization, clipped surrogate + 0.5·value MSE, global
/// gradient clipping, then KL-driven learning-rate adaptation
/// (×1.5 when KL < target/2, ÷1.5 when KL > 2·target, clamped).
pub fn ppo_update(
    victim: &mut Victim,
    rollout: &Rollout,
    cfg: &PpoConfig,
    opt: &mut PpoOptimizer,
    rng: &mut Rng,
) -> Result<UpdateStats, PpoError> {
    if rollout.is_empty() {
        return Err(PpoError::EmptyTrajectory);
    }
    let n = rollout.len();
    let obs_dim = victim.policy.obs_dim();
    let act_dim = victim.policy.action_dim();

    // Advantage normalization over the whole buffer.
    let mean = rollout.advantages.iter().sum::<f64>() / n as f64;
    let var = rollout.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let norm_adv: Vec<f64> = if std > 0.0 {
        rollout.advantages.iter().map(|a| (a - mean) / std).collect()
    } else {
        rollout.advantages.iter().map(|a| a - mean).collect()
    };

    let batch = cfg.batch.min(n);
    let ug = build_update_graph(victim, cfg.value_coef);

    let mut indices: Vec<usize> = (0..n).collect();
    let mut policy_loss_acc = 0.0;
    let mut value_loss_acc = 0.0;
    let mut minibatches = 0.0;

    for _ in 0..cfg.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks_exact(batch) {
            // Eager ratios decide which samples the clip gates off.
            let mut gate = vec![0.0; batch];
            let mut true_surrogate = 0.0;
            for (k, &i) in chunk.iter().enumerate() {
                let t = &rollout.transitions[i];
                let logp_new = victim.policy.log_prob(&t.obs, &t.action);
                let ratio = (logp_new - t.log_prob_old).exp();
                let a = norm_adv[i];
                let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
                true_surrogate += (ratio * a).min(clipped * a);
                let clipped_off =
                    (a >= 0.0 && ratio > 1.0 + cfg.clip) || (a < 0.0 && ratio < 1.0 - cfg.clip);
                gate[k] = if clipped_off { 0.0 } else { 1.0 };
            }
            true_surrogate /= batch as f64;

            let mut flat_obs = Vec::with_capacity(batch * obs_dim);
            let mut flat_act = Vec::with_capacity(batch * act_dim);
            let mut lp_old = Vec::with_capacity(batch);
            let mut adv = Vec::with_capacity(batch);
            let mut tgt = Vec::with_capacity(batch);
            for &i in chunk {
                let t = &rollout.transitions[i];
                flat_obs.extend_from_slice(&t.obs);
                flat_act.extend_from_slice(&t.action);
                lp_old.push(t.log_prob_old);
                adv.push(norm_adv[i]);
                tgt.push(rollout.returns[i]);
            }

            let mut bind = ug.graph.bindings();
            bind.set(ug.states, Tensor::matrix(batch, obs_dim, flat_obs));
            bind.set(ug.actions, Tensor::matrix(batch, act_dim, flat_act));
            bind.set(ug.log_prob_old, Tensor::vector(lp_old));
            bind.set(ug.advantages, Tensor::vector(adv));
            bind.set(ug.gate, Tensor::vector(gate));
            bind.set(ug.targets, Tensor::matrix(batch, 1, tgt));
            bind.set(ug.log_std, victim.policy.log_std.clone());
            victim.policy.net.bind_params(&mut bind, &ug.policy_nodes);
            victim.value.net.bind_params(&mut bind, &ug.value_nodes);

            let eval = ug.graph.evaluate(&bind)?;
            let total = eval.output().item();
            if !total.is_finite() {
                return Err(PpoError::NonFinite(format!("total loss {total}")));
            }
            let vloss = eval.value(ug.value_loss).item();
            let grads_map = eval.backward_scalar()?;

            let mut param_nodes: Vec<NodeId> = ug.policy_nodes.params.clone();
            param_nodes.push(ug.log_std);
            let n_policy = param_nodes.len();
            param_nodes.extend(ug.value_nodes.params.iter().copied());

            let mut grads: Vec<Tensor> = param_nodes
                .iter()
                .map(|id| grads_map.leaf(*id).expect("trainable leaf has gradient").clone())
                .collect();
            clip_global_norm(&mut grads, cfg.max_grad_norm);

            let (pol_grads, val_grads) = grads.split_at(n_policy);
            {
                let mut params = victim.policy.params_mut();
                opt.adam_policy.step(opt.lr, &mut params, pol_grads);
            }
            victim.policy.clamp_log_std();
            {
                let mut params = victim.value.net.params_mut();
                opt.adam_value.step(opt.lr, &mut params, val_grads);
            }

            policy_loss_acc += true_surrogate;
            value_loss_acc += vloss;
            minibatches += 1.0;
        }
    }

    // KL measured over the full buffer after the update.
    let mut kl = 0.0;
    for t in &rollout.transitions {
        kl += t.log_prob_old - victim.policy.log_prob(&t.obs, &t.action);
    }
    kl /= n as f64;
    if !kl.is_finite() {
        return Err(PpoError::NonFinite(format!("kl {kl}")));
    }
    if kl < cfg.kl_target / 2.0 {
        opt.lr *= 1.5;
    } else if kl > cfg.kl_target * 2.0 {
        opt.lr /= 1.5;
    }
    opt.lr = opt.lr.clamp(cfg.lr_min, cfg.lr_max);

    Ok(UpdateStats {
        policy_loss: if minibatches > 0.0 { policy_loss_acc / minibatches } else { 0.0 },
        value_loss: if minibatches > 0.0 { value_loss_acc / minibatches } else { 0.0 },
        kl,
        lr: opt.lr,
    })
}

/// One point on the training curve.
#[derive(Clone, Copy, Debug)]
pub struct CurveRow {
    pub step: u64,
    pub reward_mean: f64,
    pub velocity_mean: f64,
    pub fall_rate_pct: f64,
}

/// Deterministic evaluation (mean actions, no attack): per-episode mean
/// per-step reward, mean velocity, and fall rate in percent, averaged over
/// `episodes`.
pub fn evaluate_policy<E: Env>(
    env_proto: &E,
    victim: &Victim,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64, f64), PpoError>
where
    E: Clone,
{
    let mut rewards = Vec::with_capacity(episodes);
    let mut velocities = Vec::with_capacity(episodes);
    let mut falls = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut env = env_proto.clone();
        let mut rng = substream(seed, 0xE7A1, ep as u64);
        let mut raw = env.reset(&mut rng);
        let mut r_sum = 0.0;
        let mut v_sum = 0.0;
        let mut fell = 0.0;
        let mut steps = 0.0;
        loop {
            let obs = victim.norm.normalize(&raw);
            let action = victim.policy.mean(&obs);
            let res = env.step(&action, &mut rng)?;
            r_sum += res.reward;
            v_sum += res.info.velocity;
            if res.info.fell {
                fell += 1.0;
            }
            steps += 1.0;
            raw = res.next_state;
            if res.terminal {
                break;
            }
        }
        rewards.push(r_sum / steps);
        velocities.push(v_sum / steps);
        falls.push(fell / steps * 100.0);
    }
    let avg = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok((avg(&rewards), avg(&velocities), avg(&falls)))
}

/// Trains a victim on `env` for `total_steps` environment steps, evaluating
/// every `eval_every` steps. Zero steps returns the initialized victim
/// untouched.
pub fn train_victim<E: Env + Clone>(
    env_proto: &E,
    cfg: &PpoConfig,
    total_steps: u64,
    eval_every: u64,
    eval_episodes: usize,
    seed: u64,
) -> Result<(Victim, Vec<CurveRow>), PpoError> {
    let mut init_rng = substream(seed, 0x1717, 0);
    let mut victim =
        Victim::new(env_proto.obs_dim(), env_proto.action_dim(), &cfg.hidden, &mut init_rng);
    let mut env = env_proto.clone();
    let mut env_rng = substream(seed, 0xE4B, 0);
    let mut update_rng = substream(seed, 0x0B7, 0);
    let mut opt = PpoOptimizer::new(cfg.lr);
    let mut curve = Vec::new();
    let mut steps_done: u64 = 0;
    let mut next_eval: u64 = 0;

    while steps_done < total_steps {
        if steps_done >= next_eval {
            let (r, v, f) = evaluate_policy(env_proto, &victim, eval_episodes, seed ^ 0x5EED)?;
            curve.push(CurveRow {
                step: steps_done,
                reward_mean: r,
                velocity_mean: v,
                fall_rate_pct: f,
            });
            next_eval += eval_every;
        }
        let todo = cfg.rollout.min((total_steps - steps_done) as usize);
        let mut rollout = collect_rollout(&mut env, &mut victim, todo, true, None, &mut env_rng)?;
        rollout.finalize(cfg.gamma, cfg.gae_lambda)?;
        ppo_update(&mut victim, &rollout, cfg, &mut opt, &mut update_rng)?;
        steps_done += rollout.len() as u64;
    }
    if total_steps > 0 {
        let (r, v, f) = evaluate_policy(env_proto, &victim, eval_episodes, seed ^ 0x5EED)?;
        curve.push(CurveRow { step: steps_done, reward_mean: r, velocity_mean: v, fall_rate_pct: f });
    }
    Ok((victim, curve))
}
