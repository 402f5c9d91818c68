//! Adam optimizer over lists of parameter tensors, plus global-norm gradient
//! clipping.

use crate::Tensor;

/// Adam with bias correction. State is kept per parameter tensor in the same
/// order the parameters are passed to [`Adam::step`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update step: `p -= lr * m̂ / (sqrt(v̂) + eps)`.
    ///
    /// `params` and `grads` must line up one-to-one and keep the same order
    /// across calls.
    pub fn step(&mut self, lr: f64, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state does not match params");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len(), "param/grad shape mismatch at index {k}");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let pd = p.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                pd[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

/// Scales the gradient set in place so its global L2 norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if total > max_norm && total > 0.0 {
        let scale = max_norm / total;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (p - 3)²
        let mut p = Tensor::vector(vec![0.0]);
        let mut adam = Adam::new();
        for _ in 0..500 {
            let g = Tensor::vector(vec![2.0 * (p.data()[0] - 3.0)]);
            adam.step(0.05, &mut [&mut p], &[g]);
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3, "got {}", p.data()[0]);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut gs = vec![Tensor::vector(vec![3.0, 0.0]), Tensor::vector(vec![0.0, 4.0])];
        let pre = clip_global_norm(&mut gs, 0.5);
        assert!((pre - 5.0).abs() < 1e-12);
        let post: f64 = gs.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
        assert!((post - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut gs = vec![Tensor::vector(vec![0.1, 0.2])];
        let before = gs[0].clone();
        clip_global_norm(&mut gs, 0.5);
        assert_eq!(gs[0], before);
    }
}
