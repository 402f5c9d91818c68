//! Function approximators: tanh MLPs, the victim's diagonal-Gaussian policy,
//! scalar value networks, and the mask network used by the STAR adversary.

use rand::Rng as _;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{Bindings, NodeId};
use crate::rng::Rng;
use crate::{Graph, Tensor};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("network produced a non-finite output")]
    NonFinite,
    #[error("configuration error: {0}")]
    Config(String),
}

/// Learned log-std is clamped to this range after every update.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// One fully-connected layer, `w: [out, in]`, `b: [out]`.
#[derive(Clone, Debug)]
pub struct AffineLayer {
    pub w: Tensor,
    pub b: Tensor,
}

/// Multi-layer perceptron with tanh hidden activations and a linear output
/// layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<AffineLayer>,
}

/// Graph handles produced by [`Mlp::build`]: the output node plus the
/// parameter leaves in `w0, b0, w1, b1, ...` order (empty when frozen
/// parameters were requested — they are still leaves internally but callers
/// only rebind them through [`Mlp::bind_params`]).
pub struct MlpNodes {
    pub output: NodeId,
    pub params: Vec<NodeId>,
}

impl Mlp {
    /// Xavier-uniform initialization, deterministic from `rng`.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "MLP needs at least input and output sizes");
        let mut layers = Vec::new();
        for win in sizes.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Tensor::from_fn(&[fan_out, fan_in], |_| rng.random_range(-limit..limit));
            let b = Tensor::zeros(&[fan_out]);
            layers.push(AffineLayer { w, b });
        }
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = vec![self.layers[0].w.shape()[1]];
        s.extend(self.layers.iter().map(|l| l.w.shape()[0]));
        s
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.shape()[0]
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn from_layers(layers: Vec<AffineLayer>) -> Self {
        assert!(!layers.is_empty());
        Self { layers }
    }

    /// Plain forward pass for rollouts; no graph bookkeeping.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim(), "MLP input dimension mismatch");
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (out_dim, in_dim) = (layer.w.shape()[0], layer.w.shape()[1]);
            let mut next = vec![0.0; out_dim];
            for o in 0..out_dim {
                let mut acc = layer.b.data()[o];
                let row = &layer.w.data()[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    acc += row[i] * cur[i];
                }
                next[o] = if li < last { acc.tanh() } else { acc };
            }
            cur = next;
        }
        cur
    }

    /// Record this MLP applied to `x` into a graph. Parameter leaves are
    /// differentiable iff `trainable`; bind them with [`Mlp::bind_params`].
    pub fn build(&self, g: &mut Graph, x: NodeId, trainable: bool, tag: &str) -> MlpNodes {
        let mut params = Vec::new();
        let mut cur = x;
        let last = self.layers.len() - 1;
        for (li, _) in self.layers.iter().enumerate() {
            let w = g.leaf(format!("{tag}.w{li}"), trainable);
            let b = g.leaf(format!("{tag}.b{li}"), trainable);
            params.push(w);
            params.push(b);
            cur = g.affine(w, b, cur);
            if li < last {
                cur = g.tanh(cur);
            }
        }
        MlpNodes { output: cur, params }
    }

    /// Bind current parameter values to the leaves created by [`Mlp::build`].
    pub fn bind_params(&self, bind: &mut Bindings<f64>, nodes: &MlpNodes) {
        for (li, layer) in self.layers.iter().enumerate() {
            bind.set(nodes.params[2 * li], layer.w.clone());
            bind.set(nodes.params[2 * li + 1], layer.b.clone());
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Scalar-output MLP for state values.
#[derive(Clone, Debug)]
pub struct ValueNet {
    pub net: Mlp,
}

impl ValueNet {
    pub fn new(obs_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self { net: Mlp::new(&sizes, rng) }
    }

    pub fn value(&self, s: &[f64]) -> f64 {
        self.net.forward(s)[0]
    }
}

/// Diagonal-Gaussian policy: tanh trunk + affine mean head, with a learned
/// state-independent log-std vector.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub log_std: Tensor,
}

impl GaussianPolicy {
    /// Default victim architecture: two 128-unit hidden layers.
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Self {
            net: Mlp::new(&sizes, rng),
            // Moderate initial exploration: std ≈ 0.61.
            log_std: Tensor::full(&[action_dim], -0.5),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn mean(&self, s: &[f64]) -> Vec<f64> {
        self.net.forward(s)
    }

    /// Sample `action = mean + exp(log_std) ⊙ z`, returning the action and its
    /// log density. Errors if the network emits non-finite values.
    pub fn sample(&self, s: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64), NetError> {
        let mean = self.mean(s);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite);
        }
        let mut action = vec![0.0; mean.len()];
        for i in 0..mean.len() {
            let z: f64 = rng.sample(StandardNormal);
            action[i] = mean[i] + self.log_std.data()[i].exp() * z;
        }
        let logp = self.log_prob_given_mean(&mean, &action);
        Ok((action, logp))
    }

    /// Diagonal-Gaussian log density of `a` at state `s`.
    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> f64 {
        self.log_prob_given_mean(&self.mean(s), a)
    }

    pub fn log_prob_given_mean(&self, mean: &[f64], a: &[f64]) -> f64 {
        assert_eq!(mean.len(), a.len());
        let ln_two_pi = (2.0 * std::f64::consts::PI).ln();
        let mut acc = 0.0;
        for i in 0..mean.len() {
            let ls = self.log_std.data()[i];
            let z = (a[i] - mean[i]) * (-ls).exp();
            acc += -ls - 0.5 * ln_two_pi - 0.5 * z * z;
        }
        acc
    }

    pub fn clamp_log_std(&mut self) {
        for v in self.log_std.data_mut() {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.net.params();
        p.push(&self.log_std);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.net.params_mut();
        p.push(&mut self.log_std);
        p
    }
}

/// Mask network for STAR: per-state-dimension logits squashed by
/// `sigmoid(logits / τ)`.
#[derive(Clone, Debug)]
pub struct MaskNet {
    pub net: Mlp,
    pub tau: f64,
}

impl MaskNet {
    /// Default adversary architecture: three 64-unit hidden layers.
    pub fn new(obs_dim: usize, hidden: &[usize], tau: f64, rng: &mut Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(obs_dim);
        Self { net: Mlp::new(&sizes, rng), tau }
    }

    pub fn logits(&self, s: &[f64]) -> Vec<f64> {
        self.net.forward(s)
    }

    /// Mask probabilities `m(s) = sigmoid(logits / τ)`, componentwise in (0,1).
    pub fn probs(&self, s: &[f64]) -> Vec<f64> {
        self.logits(s).iter().map(|&z| sigmoid(z / self.tau)).collect()
    }

    /// Hard mask branches sampled with logistic (Gumbel-difference) noise:
    /// `b_i = 1` with probability exactly `m_i`. Returns `(branches, probs)`.
    pub fn sample_branches(&self, s: &[f64], rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        let logits = self.logits(s);
        let mut b = vec![0.0; logits.len()];
        let mut m = vec![0.0; logits.len()];
        for i in 0..logits.len() {
            let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
            let noise = u.ln() - (1.0 - u).ln();
            let z = logits[i] / self.tau;
            m[i] = sigmoid(z);
            b[i] = if z + noise > 0.0 { 1.0 } else { 0.0 };
        }
        (b, m)
    }

    /// Hard mask for analysis only: threshold 0.5 on the probabilities.
    pub fn hard_mask(&self, s: &[f64]) -> Vec<f64> {
        self.probs(s).iter().map(|&m| if m >= 0.5 { 1.0 } else { 0.0 }).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Soft mask interpolation `β·m + (1-β)·(1-m)`, computed in the equivalent
/// affine form `(1-β) + (2β-1)·m` (exact for β = 0.5 regardless of `m`).
/// Output range is `[min(β,1-β), max(β,1-β)]`.
pub fn soft_mask(m: &[f64], beta: f64) -> Result<Vec<f64>, NetError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(NetError::Config(format!("interpolation factor must be in (0,1), got {beta}")));
    }
    let offset = 1.0 - beta;
    let slope = 2.0 * beta - 1.0;
    Ok(m.iter().map(|&mi| offset + slope * mi).collect())
}

/// Factorized Bernoulli log-likelihood of sampled mask branches `b` under
/// probabilities `m`.
pub fn mask_log_likelihood(b: &[f64], m: &[f64]) -> f64 {
    assert_eq!(b.len(), m.len());
    let mut acc = 0.0;
    for i in 0..b.len() {
        let mi = m[i].clamp(1e-12, 1.0 - 1e-12);
        acc += if b[i] > 0.5 { mi.ln() } else { (1.0 - mi).ln() };
    }
    acc
}

/// Closed-form KL divergence between diagonal Gaussians
/// `KL(N(m1, e^{2·ls1}) ‖ N(m2, e^{2·ls2}))`.
pub fn diag_gaussian_kl(m1: &[f64], ls1: &[f64], m2: &[f64], ls2: &[f64]) -> f64 {
    assert!(m1.len() == m2.len() && ls1.len() == ls2.len() && m1.len() == ls1.len());
    let mut acc = 0.0;
    for i in 0..m1.len() {
        let v1 = (2.0 * ls1[i]).exp();
        let v2 = (2.0 * ls2[i]).exp();
        acc += ls2[i] - ls1[i] + (v1 + (m1[i] - m2[i]).powi(2)) / (2.0 * v2) - 0.5;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;

    fn zero_weight_policy(obs: usize, act: usize, bias: &[f64]) -> GaussianPolicy {
        let mut rng = seed_rng(0);
        let mut p = GaussianPolicy::new(obs, act, &[8], &mut rng);
        for layer in p.net.layers.iter_mut() {
            for v in layer.w.data_mut() {
                *v = 0.0;
            }
            for v in layer.b.data_mut() {
                *v = 0.0;
            }
        }
        let last = p.net.layers.last_mut().unwrap();
        last.b.data_mut().copy_from_slice(bias);
        for v in p.log_std.data_mut() {
            *v = 0.0;
        }
        p
    }

    #[test]
    fn sample_at_zero_noise_hits_bias_with_max_density() {
        // Zero weights, log_std = 0: mean is the output bias; the density at
        // the mean is -(d/2)·ln(2π).
        let p = zero_weight_policy(3, 2, &[0.4, -0.2]);
        let mean = p.mean(&[9.0, -3.0, 0.5]);
        assert_eq!(mean, vec![0.4, -0.2]);
        let logp = p.log_prob(&[9.0, -3.0, 0.5], &mean);
        let expect = -(2.0 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((logp - expect).abs() < 1e-12);
    }

    #[test]
    fn one_std_from_mean_costs_half() {
        let p = zero_weight_policy(2, 1, &[1.0]);
        let s = [0.0, 0.0];
        let at_mean = p.log_prob(&s, &[1.0]);
        let one_std = p.log_prob(&s, &[1.0 + p.log_std.data()[0].exp()]);
        assert!((at_mean - one_std - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mut rng = seed_rng(5);
        let p = GaussianPolicy::new(4, 3, &[16, 16], &mut rng);
        let s = [0.1, -0.9, 0.4, 2.0];
        let (a1, lp1) = p.sample(&s, &mut seed_rng(99)).unwrap();
        let (a2, lp2) = p.sample(&s, &mut seed_rng(99)).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(lp1, lp2);
    }

    #[test]
    fn log_prob_integrates_to_one_in_1d() {
        // Trapezoid quadrature of exp(log_prob) over a wide interval.
        let p = zero_weight_policy(1, 1, &[0.3]);
        let s = [0.0];
        let (lo, hi) = (-8.0_f64, 8.0_f64);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let a = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * p.log_prob(&s, &[a]).exp();
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn log_prob_gradient_wrt_action_vanishes_at_mean() {
        let mut rng = seed_rng(8);
        let p = GaussianPolicy::new(3, 2, &[8, 8], &mut rng);
        let s = [0.2, -0.4, 1.1];
        let mean = p.mean(&s);

        let mut g = Graph::new();
        let m = g.leaf("mean", false);
        let ls = g.leaf("log_std", false);
        let a = g.leaf("action", true);
        let lp = g.gaussian_log_prob(m, ls, a);
        g.set_output(lp);
        let mut bind = g.bindings();
        bind.set(m, Tensor::vector(mean.clone()));
        bind.set(ls, p.log_std.clone());
        bind.set(a, Tensor::vector(mean.clone()));
        let eval = g.evaluate(&bind).unwrap();
        let grads = eval.backward_scalar().unwrap();
        for &v in grads.leaf(a).unwrap().data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn soft_mask_matches_interpolation_examples() {
        assert_eq!(soft_mask(&[1.0], 0.75).unwrap(), vec![0.75]);
        assert_eq!(soft_mask(&[0.0], 0.75).unwrap(), vec![0.25]);
        for beta in [0.2, 0.5, 0.6, 0.75, 0.9] {
            let out = soft_mask(&[0.5], beta).unwrap()[0];
            assert!((out - 0.5).abs() < 1e-15, "fixed point broke at beta={beta}");
        }
    }

    #[test]
    fn soft_mask_is_exactly_half_at_beta_half() {
        for m in [0.0, 0.1, 0.3, 0.77, 1.0] {
            assert_eq!(soft_mask(&[m], 0.5).unwrap()[0], 0.5);
        }
    }

    #[test]
    fn soft_mask_range_endpoints() {
        // For β ≥ 0.5 the range is exactly [1-β, β], attained at m ∈ {0,1}.
        for beta in [0.5, 0.6, 0.75, 0.95] {
            let lo = soft_mask(&[0.0], beta).unwrap()[0];
            let hi = soft_mask(&[1.0], beta).unwrap()[0];
            assert_eq!(lo, 1.0 - beta);
            assert_eq!(hi, beta);
            for m in [0.001, 0.25, 0.5, 0.999] {
                let v = soft_mask(&[m], beta).unwrap()[0];
                assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn soft_mask_rejects_bad_beta() {
        assert!(soft_mask(&[0.5], 0.0).is_err());
        assert!(soft_mask(&[0.5], 1.0).is_err());
        assert!(soft_mask(&[0.5], -0.1).is_err());
    }

    #[test]
    fn mask_sampling_frequency_matches_probability() {
        let mut rng = seed_rng(21);
        let mask = MaskNet::new(4, &[16], 1.0, &mut rng);
        let s = [0.3, -0.2, 0.9, 0.0];
        let m = mask.probs(&s);
        assert!(m.iter().all(|&v| v > 0.0 && v < 1.0));
        let mut counts = vec![0.0; 4];
        let n = 20_000;
        for _ in 0..n {
            let (b, _) = mask.sample_branches(&s, &mut rng);
            for i in 0..4 {
                counts[i] += b[i];
            }
        }
        for i in 0..4 {
            let freq = counts[i] / n as f64;
            assert!((freq - m[i]).abs() < 0.02, "dim {i}: freq {freq} vs prob {}", m[i]);
        }
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let m = [0.3, -0.8];
        let ls = [-0.2, 0.4];
        assert_eq!(diag_gaussian_kl(&m, &ls, &m, &ls), 0.0);
    }
}
