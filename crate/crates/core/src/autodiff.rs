//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records operations against symbolic [`NodeId`]s; leaves are
//! bound to concrete tensors at evaluation time, so one graph can be reused
//! across minibatches or attack iterations. [`Graph::evaluate`] runs the
//! forward pass (caching every intermediate and rejecting non-finite values),
//! and [`Evaluation::backward`] replays the tape in reverse, accumulating
//! adjoints, to produce the gradient of the output with respect to every
//! differentiable leaf — network parameters and input states alike.
//!
//! The op set is the minimum needed by the policy losses in this crate:
//! affine layers, tanh/sigmoid/exp/log, elementwise add/mul, scalar
//! add/mul, sum/mean/row-sum reductions, mean squared error, and the
//! diagonal-Gaussian log density.

use thiserror::Error;

use crate::scalar::Real;
use crate::tensor::TensorBase;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node {node} ({op}): shape mismatch: {detail}")]
    ShapeMismatch { node: usize, op: &'static str, detail: String },
    #[error("node {node} ({op}): non-finite value in output")]
    NonFinite { node: usize, op: &'static str },
    #[error("leaf '{name}' (node {node}) not bound")]
    UnboundLeaf { node: usize, name: String },
    #[error("graph has no output node set")]
    NoOutput,
    #[error("backward seed shape {seed:?} does not match output shape {output:?}")]
    SeedShape { seed: Vec<usize>, output: Vec<usize> },
    #[error("finite-difference probe produced a non-finite value at coordinate {coord}")]
    NonFiniteProbe { coord: usize },
}

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf { name: String, differentiable: bool },
    /// `y = x · wᵀ + b` with `w: [out, in]`, `b: [out]`, `x: [n, in]` or `[in]`.
    Affine { w: NodeId, b: NodeId, x: NodeId },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId, F),
    MulScalar(NodeId, F),
    Sum(NodeId),
    Mean(NodeId),
    /// `[n, d] -> [n]` (sum along the trailing axis); `[d] -> scalar`.
    RowSum(NodeId),
    /// Mean of elementwise squared differences; scalar output.
    SquaredError { pred: NodeId, target: NodeId },
    /// Per-row diagonal-Gaussian log density of `action` under
    /// `N(mean, exp(log_std)²)`. `mean`/`action`: `[n, d]` or `[d]`,
    /// `log_std`: `[d]`. Output `[n]` or scalar. Gradients flow to all three.
    GaussianLogProb { mean: NodeId, log_std: NodeId, action: NodeId },
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::SquaredError { .. } => "squared_error",
            Op::GaussianLogProb { .. } => "gaussian_log_prob",
        }
    }
}

/// Recorded computation over symbolic leaves. Acyclic by construction: ops can
/// only reference already-created nodes, so node order is a topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph<F: Real> {
    nodes: Vec<Op<F>>,
    output: Option<NodeId>,
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), output: None }
    }

    fn push(&mut self, op: Op<F>) -> NodeId {
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    /// Declare an input. Differentiable leaves receive gradients in backward.
    pub fn leaf(&mut self, name: impl Into<String>, differentiable: bool) -> NodeId {
        self.push(Op::Leaf { name: name.into(), differentiable })
    }

    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> NodeId {
        self.push(Op::Affine { w, b, x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Exp(x))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Log(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: F) -> NodeId {
        self.push(Op::AddScalar(x, c))
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: F) -> NodeId {
        self.push(Op::MulScalar(x, c))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.mul_scalar(x, -F::one())
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x))
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::RowSum(x))
    }

    pub fn squared_error(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        self.push(Op::SquaredError { pred, target })
    }

    pub fn gaussian_log_prob(&mut self, mean: NodeId, log_std: NodeId, action: NodeId) -> NodeId {
        self.push(Op::GaussianLogProb { mean, log_std, action })
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn output_node(&self) -> Option<NodeId> {
        self.output
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Fresh binding table for this graph's leaves.
    pub fn bindings(&self) -> Bindings<F> {
        Bindings { values: vec![None; self.nodes.len()] }
    }

    /// Forward pass: computes every node, caches intermediates for backward.
    pub fn evaluate(&self, bindings: &Bindings<F>) -> Result<Evaluation<'_, F>, GraphError> {
        let out_id = self.output.ok_or(GraphError::NoOutput)?;
        let mut values: Vec<TensorBase<F>> = Vec::with_capacity(self.nodes.len());
        for (idx, op) in self.nodes.iter().enumerate() {
            let value = self.forward_op(idx, op, bindings, &values)?;
            if !value.all_finite() {
                return Err(GraphError::NonFinite { node: idx, op: op.name() });
            }
            values.push(value);
        }
        debug_assert!(out_id.0 < values.len());
        Ok(Evaluation { graph: self, values })
    }

    fn forward_op(
        &self,
        idx: usize,
        op: &Op<F>,
        bindings: &Bindings<F>,
        values: &[TensorBase<F>],
    ) -> Result<TensorBase<F>, GraphError> {
        let shape_err = |detail: String| GraphError::ShapeMismatch { node: idx, op: op.name(), detail };
        match op {
            Op::Leaf { name, .. } => bindings.values[idx]
                .clone()
                .ok_or_else(|| GraphError::UnboundLeaf { node: idx, name: name.clone() }),
            Op::Affine { w, b, x } => {
                let (w, b, x) = (&values[w.0], &values[b.0], &values[x.0]);
                if w.ndim() != 2 {
                    return Err(shape_err(format!("weight must be rank 2, got {:?}", w.shape())));
                }
                let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
                if b.shape() != [out_dim] {
                    return Err(shape_err(format!(
                        "bias shape {:?} does not match weight rows {}",
                        b.shape(),
                        out_dim
                    )));
                }
                if x.cols() != in_dim || x.ndim() > 2 || x.ndim() == 0 {
                    return Err(shape_err(format!(
                        "input shape {:?} incompatible with weight {:?}",
                        x.shape(),
                        w.shape()
                    )));
                }
                let n = x.rows();
                let mut out = vec![F::zero(); n * out_dim];
                let (wd, bd, xd) = (w.data(), b.data(), x.data());
                for r in 0..n {
                    for o in 0..out_dim {
                        let mut acc = bd[o];
                        let wrow = &wd[o * in_dim..(o + 1) * in_dim];
                        let xrow = &xd[r * in_dim..(r + 1) * in_dim];
                        for i in 0..in_dim {
                            acc = acc + wrow[i] * xrow[i];
                        }
                        out[r * out_dim + o] = acc;
                    }
                }
                Ok(if x.ndim() == 2 {
                    TensorBase::matrix(n, out_dim, out)
                } else {
                    TensorBase::vector(out)
                })
            }
            Op::Tanh(a) => Ok(values[a.0].map(|v| v.tanh())),
            Op::Sigmoid(a) => Ok(values[a.0].map(|v| F::one() / (F::one() + (-v).exp()))),
            Op::Exp(a) => Ok(values[a.0].map(|v| v.exp())),
            Op::Log(a) => Ok(values[a.0].map(|v| v.ln())),
            Op::Add(a, b) => {
                let (a, b) = (&values[a.0], &values[b.0]);
                if a.shape() != b.shape() {
                    return Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                Ok(a.zip_map(b, |x, y| x + y))
            }
            Op::Mul(a, b) => {
                let (a, b) = (&values[a.0], &values[b.0]);
                if a.shape() != b.shape() {
                    return Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                Ok(a.zip_map(b, |x, y| x * y))
            }
            Op::AddScalar(a, c) => Ok(values[a.0].map(|v| v + *c)),
            Op::MulScalar(a, c) => Ok(values[a.0].map(|v| v * *c)),
            Op::Sum(a) => Ok(TensorBase::scalar(values[a.0].sum())),
            Op::Mean(a) => {
                let t = &values[a.0];
                if t.is_empty() {
                    return Err(shape_err("mean of empty tensor".into()));
                }
                Ok(TensorBase::scalar(t.sum() / F::c(t.len() as f64)))
            }
            Op::RowSum(a) => {
                let t = &values[a.0];
                match t.ndim() {
                    2 => {
                        let (n, d) = (t.shape()[0], t.shape()[1]);
                        let mut out = vec![F::zero(); n];
                        for r in 0..n {
                            let mut acc = F::zero();
                            for c in 0..d {
                                acc = acc + t.data()[r * d + c];
                            }
                            out[r] = acc;
                        }
                        Ok(TensorBase::vector(out))
                    }
                    1 => Ok(TensorBase::scalar(t.sum())),
                    _ => Err(shape_err(format!("row_sum needs rank 1 or 2, got {:?}", t.shape()))),
                }
            }
            Op::SquaredError { pred, target } => {
                let (p, t) = (&values[pred.0], &values[target.0]);
                if p.shape() != t.shape() {
                    return Err(shape_err(format!("{:?} vs {:?}", p.shape(), t.shape())));
                }
                if p.is_empty() {
                    return Err(shape_err("squared_error of empty tensor".into()));
                }
                let n = F::c(p.len() as f64);
                let acc = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
                Ok(TensorBase::scalar(acc / n))
            }
            Op::GaussianLogProb { mean, log_std, action } => {
                let (m, ls, a) = (&values[mean.0], &values[log_std.0], &values[action.0]);
                if m.shape() != a.shape() {
                    return Err(shape_err(format!(
                        "mean {:?} vs action {:?}",
                        m.shape(),
                        a.shape()
                    )));
                }
                let d = m.cols();
                if ls.shape() != [d] {
                    return Err(shape_err(format!(
                        "log_std shape {:?} does not match dim {}",
                        ls.shape(),
                        d
                    )));
                }
                let n = m.rows();
                let half = F::c(0.5);
                let ln_two_pi = (F::c(2.0) * F::PI()).ln();
                let mut out = vec![F::zero(); n];
                for r in 0..n {
                    let mut acc = F::zero();
                    for c in 0..d {
                        let lsd = ls.data()[c];
                        let z = (a.data()[r * d + c] - m.data()[r * d + c]) * (-lsd).exp();
                        acc = acc - lsd - half * ln_two_pi - half * z * z;
                    }
                    out[r] = acc;
                }
                Ok(if m.ndim() == 2 {
                    TensorBase::vector(out)
                } else {
                    TensorBase::scalar(out[0])
                })
            }
        }
    }
}

/// Leaf bindings for one evaluation. Keyed by the leaf's [`NodeId`].
#[derive(Clone, Debug)]
pub struct Bindings<F> {
    values: Vec<Option<TensorBase<F>>>,
}

impl<F: Real> Bindings<F> {
    pub fn set(&mut self, leaf: NodeId, value: TensorBase<F>) {
        self.values[leaf.0] = Some(value);
    }
}

/// Result of a forward pass; owns every intermediate value.
pub struct Evaluation<'g, F: Real> {
    graph: &'g Graph<F>,
    values: Vec<TensorBase<F>>,
}

impl<'g, F: Real> Evaluation<'g, F> {
    pub fn output(&self) -> &TensorBase<F> {
        let id = self.graph.output.expect("evaluate enforces an output");
        &self.values[id.0]
    }

    pub fn value(&self, id: NodeId) -> &TensorBase<F> {
        &self.values[id.0]
    }

    /// Reverse pass from an explicit seed (shape must match the output).
    pub fn backward(&self, seed: &TensorBase<F>) -> Result<Gradients<F>, GraphError> {
        let out_id = self.graph.output.expect("evaluate enforces an output");
        if seed.shape() != self.values[out_id.0].shape() {
            return Err(GraphError::SeedShape {
                seed: seed.shape().to_vec(),
                output: self.values[out_id.0].shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<TensorBase<F>>> = vec![None; self.graph.nodes.len()];
        adj[out_id.0] = Some(seed.clone());

        // Reverse topological order; each node visited exactly once.
        for idx in (0..self.graph.nodes.len()).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let op = &self.graph.nodes[idx];
            match op {
                Op::Leaf { differentiable, .. } => {
                    if *differentiable {
                        adj[idx] = Some(dy); // keep as the final gradient
                    }
                }
                Op::Affine { w, b, x } => {
                    let (wv, xv) = (&self.values[w.0], &self.values[x.0]);
                    let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
                    let n = xv.rows();
                    let mut dw = vec![F::zero(); out_dim * in_dim];
                    let mut db = vec![F::zero(); out_dim];
                    let mut dx = vec![F::zero(); n * in_dim];
                    for r in 0..n {
                        for o in 0..out_dim {
                            let g = dy.data()[r * out_dim + o];
                            db[o] = db[o] + g;
                            for i in 0..in_dim {
                                dw[o * in_dim + i] = dw[o * in_dim + i] + g * xv.data()[r * in_dim + i];
                                dx[r * in_dim + i] = dx[r * in_dim + i] + g * wv.data()[o * in_dim + i];
                            }
                        }
                    }
                    accumulate(&mut adj, *w, TensorBase::matrix(out_dim, in_dim, dw));
                    accumulate(&mut adj, *b, TensorBase::vector(db));
                    let dx = if xv.ndim() == 2 {
                        TensorBase::matrix(n, in_dim, dx)
                    } else {
                        TensorBase::vector(dx)
                    };
                    accumulate(&mut adj, *x, dx);
                }
                Op::Tanh(a) => {
                    let y = &self.values[idx];
                    accumulate(&mut adj, *a, dy.zip_map(y, |g, t| g * (F::one() - t * t)));
                }
                Op::Sigmoid(a) => {
                    let y = &self.values[idx];
                    accumulate(&mut adj, *a, dy.zip_map(y, |g, s| g * s * (F::one() - s)));
                }
                Op::Exp(a) => {
                    let y = &self.values[idx];
                    accumulate(&mut adj, *a, dy.zip_map(y, |g, e| g * e));
                }
                Op::Log(a) => {
                    let xv = &self.values[a.0];
                    accumulate(&mut adj, *a, dy.zip_map(xv, |g, x| g / x));
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, dy.clone());
                    accumulate(&mut adj, *b, dy);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    accumulate(&mut adj, *a, dy.zip_map(bv, |g, v| g * v));
                    accumulate(&mut adj, *b, dy.zip_map(av, |g, v| g * v));
                }
                Op::AddScalar(a, _) => accumulate(&mut adj, *a, dy),
                Op::MulScalar(a, c) => accumulate(&mut adj, *a, dy.map(|g| g * *c)),
                Op::Sum(a) => {
                    let g = dy.item();
                    accumulate(&mut adj, *a, self.values[a.0].map(|_| g));
                }
                Op::Mean(a) => {
                    let xv = &self.values[a.0];
                    let g = dy.item() / F::c(xv.len() as f64);
                    accumulate(&mut adj, *a, xv.map(|_| g));
                }
                Op::RowSum(a) => {
                    let xv = &self.values[a.0];
                    let dx = match xv.ndim() {
                        2 => {
                            let (n, d) = (xv.shape()[0], xv.shape()[1]);
                            let mut out = vec![F::zero(); n * d];
                            for r in 0..n {
                                for c in 0..d {
                                    out[r * d + c] = dy.data()[r];
                                }
                            }
                            TensorBase::matrix(n, d, out)
                        }
                        _ => xv.map(|_| dy.item()),
                    };
                    accumulate(&mut adj, *a, dx);
                }
                Op::SquaredError { pred, target } => {
                    let (pv, tv) = (&self.values[pred.0], &self.values[target.0]);
                    let scale = dy.item() * F::c(2.0) / F::c(pv.len() as f64);
                    let dp = pv.zip_map(tv, |p, t| scale * (p - t));
                    let dt = dp.map(|v| -v);
                    accumulate(&mut adj, *pred, dp);
                    accumulate(&mut adj, *target, dt);
                }
                Op::GaussianLogProb { mean, log_std, action } => {
                    let (mv, lsv, av) = (
                        &self.values[mean.0],
                        &self.values[log_std.0],
                        &self.values[action.0],
                    );
                    let d = mv.cols();
                    let n = mv.rows();
                    let mut dm = vec![F::zero(); n * d];
                    let mut da = vec![F::zero(); n * d];
                    let mut dls = vec![F::zero(); d];
                    for r in 0..n {
                        let g = dy.data()[r];
                        for c in 0..d {
                            let lsd = lsv.data()[c];
                            let inv_var = (-(lsd + lsd)).exp();
                            let diff = av.data()[r * d + c] - mv.data()[r * d + c];
                            // d logp / d mean = (a - m)/σ²; d/d action is its negation.
                            dm[r * d + c] = g * diff * inv_var;
                            da[r * d + c] = -g * diff * inv_var;
                            // d logp / d log_std = z² - 1.
                            dls[c] = dls[c] + g * (diff * diff * inv_var - F::one());
                        }
                    }
                    let (dm, da) = if mv.ndim() == 2 {
                        (TensorBase::matrix(n, d, dm), TensorBase::matrix(n, d, da))
                    } else {
                        (TensorBase::vector(dm), TensorBase::vector(da))
                    };
                    accumulate(&mut adj, *mean, dm);
                    accumulate(&mut adj, *action, da);
                    accumulate(&mut adj, *log_std, TensorBase::vector(dls));
                }
            }
        }

        // Differentiable leaves untouched by the output still get a gradient
        // (zeros of their bound shape).
        let mut grads: Vec<Option<TensorBase<F>>> = vec![None; self.graph.nodes.len()];
        for (idx, op) in self.graph.nodes.iter().enumerate() {
            if let Op::Leaf { differentiable: true, .. } = op {
                grads[idx] = Some(match adj[idx].take() {
                    Some(g) => g,
                    None => TensorBase::zeros(self.values[idx].shape()),
                });
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward with a unit seed; output must be a single element.
    pub fn backward_scalar(&self) -> Result<Gradients<F>, GraphError> {
        let out = self.output();
        let seed = TensorBase::new(out.shape().to_vec(), vec![F::one()]);
        self.backward(&seed)
    }
}

fn accumulate<F: Real>(adj: &mut [Option<TensorBase<F>>], id: NodeId, delta: TensorBase<F>) {
    match &mut adj[id.0] {
        Some(existing) => *existing = existing.zip_map(&delta, |a, b| a + b),
        slot @ None => *slot = Some(delta),
    }
}

/// Gradient of the output with respect to each differentiable leaf.
pub struct Gradients<F> {
    grads: Vec<Option<TensorBase<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient for a differentiable leaf; `None` for anything else.
    pub fn leaf(&self, id: NodeId) -> Option<&TensorBase<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// Central finite-difference gradient of a scalar function: the independent
/// oracle used to validate backward passes. Never calls into graph internals.
pub fn central_difference_gradient<F: Real>(
    mut f: impl FnMut(&TensorBase<F>) -> Result<F, GraphError>,
    x: &TensorBase<F>,
    h: F,
) -> Result<TensorBase<F>, GraphError> {
    let mut grad = TensorBase::zeros(x.shape());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] = plus.data()[i] + h;
        let mut minus = x.clone();
        minus.data_mut()[i] = minus.data()[i] - h;
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(GraphError::NonFiniteProbe { coord: i });
        }
        grad.data_mut()[i] = (fp - fm) / (F::c(2.0) * h);
    }
    Ok(grad)
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`.
pub fn check_gradients<F: Real>(
    f: impl FnMut(&TensorBase<F>) -> Result<F, GraphError>,
    analytic: &TensorBase<F>,
    x: &TensorBase<F>,
    h: F,
) -> Result<F, GraphError> {
    assert_eq!(analytic.shape(), x.shape(), "analytic gradient shape must match x");
    let numeric = central_difference_gradient(f, x, h)?;
    let mut worst = F::zero();
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let denom = F::one().max(a.abs());
        let err = (a - n).abs() / denom;
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    use crate::rng::seed_rng;

    type T = TensorBase<f64>;

    fn eval_scalar(g: &Graph<f64>, b: &Bindings<f64>) -> f64 {
        g.evaluate(b).unwrap().output().item()
    }

    #[test]
    fn identity_affine_passes_input_through() {
        let mut g = Graph::new();
        let w = g.leaf("w", false);
        let b = g.leaf("b", false);
        let x = g.leaf("x", false);
        let y = g.affine(w, b, x);
        g.set_output(y);

        let mut bind = g.bindings();
        bind.set(w, T::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        bind.set(b, T::vector(vec![0.0, 0.0]));
        bind.set(x, T::vector(vec![1.0, 2.0]));
        let eval = g.evaluate(&bind).unwrap();
        assert_eq!(eval.output().data(), &[1.0, 2.0]);
    }

    #[test]
    fn tanh_fixed_point_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf("x", false);
        let y = g.tanh(x);
        g.set_output(y);
        let mut bind = g.bindings();
        bind.set(x, T::vector(vec![0.0, 0.0, 0.0]));
        let eval = g.evaluate(&bind).unwrap();
        assert_eq!(eval.output().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_weight_mlp_outputs_last_bias() {
        // Two affine layers with tanh between; all weights zero.
        let mut g = Graph::new();
        let (w1, b1) = (g.leaf("w1", false), g.leaf("b1", false));
        let (w2, b2) = (g.leaf("w2", false), g.leaf("b2", false));
        let x = g.leaf("x", false);
        let h = g.affine(w1, b1, x);
        let h = g.tanh(h);
        let y = g.affine(w2, b2, h);
        g.set_output(y);

        let mut bind = g.bindings();
        bind.set(w1, T::matrix(3, 2, vec![0.0; 6]));
        bind.set(b1, T::vector(vec![0.0; 3]));
        bind.set(w2, T::matrix(2, 3, vec![0.0; 6]));
        bind.set(b2, T::vector(vec![0.7, -0.3]));
        bind.set(x, T::vector(vec![5.0, -9.0]));
        let eval = g.evaluate(&bind).unwrap();
        assert_eq!(eval.output().data(), &[0.7, -0.3]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        // f(x) = x·x at x = 3 -> df/dx = 6.
        let mut g = Graph::new();
        let x = g.leaf("x", true);
        let y = g.mul(x, x);
        let s = g.sum(y);
        g.set_output(s);
        let mut bind = g.bindings();
        bind.set(x, T::vector(vec![3.0]));
        let eval = g.evaluate(&bind).unwrap();
        let grads = eval.backward_scalar().unwrap();
        assert_eq!(grads.leaf(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_tanh_gradient_at_zero_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf("x", true);
        let t = g.tanh(x);
        let s = g.sum(t);
        g.set_output(s);
        let mut bind = g.bindings();
        bind.set(x, T::vector(vec![0.0; 4]));
        let eval = g.evaluate(&bind).unwrap();
        let grads = eval.backward_scalar().unwrap();
        assert_eq!(grads.leaf(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn unbound_leaf_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf("x", false);
        let y = g.tanh(x);
        g.set_output(y);
        let bind = g.bindings();
        match g.evaluate(&bind) {
            Err(GraphError::UnboundLeaf { name, .. }) => assert_eq!(name, "x"),
            other => panic!("expected UnboundLeaf, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn shape_mismatch_names_the_node() {
        let mut g = Graph::new();
        let a = g.leaf("a", false);
        let b = g.leaf("b", false);
        let y = g.add(a, b);
        g.set_output(y);
        let mut bind = g.bindings();
        bind.set(a, T::vector(vec![1.0, 2.0]));
        bind.set(b, T::vector(vec![1.0, 2.0, 3.0]));
        match g.evaluate(&bind) {
            Err(GraphError::ShapeMismatch { node, .. }) => assert_eq!(node, y.index()),
            other => panic!("expected ShapeMismatch, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn non_finite_intermediate_reports_node() {
        let mut g = Graph::new();
        let x = g.leaf("x", false);
        let y = g.log(x);
        g.set_output(y);
        let mut bind = g.bindings();
        bind.set(x, T::vector(vec![-1.0]));
        match g.evaluate(&bind) {
            Err(GraphError::NonFinite { node, .. }) => assert_eq!(node, y.index()),
            other => panic!("expected NonFinite, got {:?}", other.map(|_| ())),
        }
    }

    /// Builds a random 2-layer tanh MLP graph returning a scalar loss of the
    /// input, the parameter tensors, and the input leaf.
    fn random_mlp_loss(
        rng: &mut crate::rng::Rng,
        sizes: &[usize],
    ) -> (Graph<f64>, Vec<(NodeId, T)>, NodeId) {
        let mut g = Graph::new();
        let x = g.leaf("x", true);
        let mut params = Vec::new();
        let mut cur = x;
        for (li, win) in sizes.windows(2).enumerate() {
            let (i, o) = (win[0], win[1]);
            let w = g.leaf(format!("w{li}"), true);
            let b = g.leaf(format!("b{li}"), true);
            let wt = T::from_fn(&[o, i], |_| rng.random_range(-0.8..0.8));
            let bt = T::from_fn(&[o], |_| rng.random_range(-0.5..0.5));
            params.push((w, wt));
            params.push((b, bt));
            cur = g.affine(w, b, cur);
            if li + 1 < sizes.len() - 1 {
                cur = g.tanh(cur);
            }
        }
        let sq = g.mul(cur, cur);
        let loss = g.mean(sq);
        g.set_output(loss);
        (g, params, x)
    }

    #[test]
    fn random_mlp_matches_finite_differences() {
        let mut rng = seed_rng(42);
        for _ in 0..20 {
            let sizes = [2usize, 8, 2];
            let (g, params, x) = random_mlp_loss(&mut rng, &sizes);
            let x0 = T::from_fn(&[2], |_| rng.random_range(-1.0..1.0));

            let mut bind = g.bindings();
            for (id, t) in &params {
                bind.set(*id, t.clone());
            }
            bind.set(x, x0.clone());
            let eval = g.evaluate(&bind).unwrap();
            let grads = eval.backward_scalar().unwrap();

            let f = |xv: &T| -> Result<f64, GraphError> {
                let mut b2 = g.bindings();
                for (id, t) in &params {
                    b2.set(*id, t.clone());
                }
                b2.set(x, xv.clone());
                Ok(g.evaluate(&b2)?.output().item())
            };
            let err = check_gradients(f, grads.leaf(x).unwrap(), &x0, 1e-5).unwrap();
            assert!(err < 1e-4, "finite-difference mismatch: {err}");
        }
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        // Linearity: grad of (f + g) equals grad f + grad g on random graphs.
        let mut rng = seed_rng(7);
        for _ in 0..10 {
            let x0 = T::from_fn(&[3], |_| rng.random_range(-1.0..1.0));
            let a = T::from_fn(&[3], |_| rng.random_range(-1.0..1.0));

            // f(x) = sum(a ⊙ tanh(x)), g(x) = mean(x ⊙ x)
            let build = |which: u8| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf("x", true);
                let ca = g.leaf("a", false);
                let f_node = {
                    let t = g.tanh(x);
                    let m = g.mul(ca, t);
                    g.sum(m)
                };
                let g_node = {
                    let sq = g.mul(x, x);
                    g.mean(sq)
                };
                let out = match which {
                    0 => f_node,
                    1 => g_node,
                    _ => g.add(f_node, g_node),
                };
                g.set_output(out);
                (g, x, ca)
            };

            let grad_of = |which: u8| {
                let (g, x, ca) = build(which);
                let mut bind = g.bindings();
                bind.set(x, x0.clone());
                bind.set(ca, a.clone());
                let eval = g.evaluate(&bind).unwrap();
                eval.backward_scalar().unwrap().leaf(x).unwrap().clone()
            };

            let gf = grad_of(0);
            let gg = grad_of(1);
            let gsum = grad_of(2);
            for i in 0..3 {
                let expect = gf.data()[i] + gg.data()[i];
                assert!((gsum.data()[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_evaluation_is_bit_identical() {
        let mut rng = seed_rng(3);
        let (g, params, x) = random_mlp_loss(&mut rng, &[3, 5, 2]);
        let x0 = T::from_fn(&[3], |_| rng.random_range(-1.0..1.0));
        let run = || {
            let mut bind = g.bindings();
            for (id, t) in &params {
                bind.set(*id, t.clone());
            }
            bind.set(x, x0.clone());
            let eval = g.evaluate(&bind).unwrap();
            let out = eval.output().item();
            let grads = eval.backward_scalar().unwrap();
            (out, grads.leaf(x).unwrap().clone())
        };
        let (o1, g1) = run();
        let (o2, g2) = run();
        assert_eq!(o1.to_bits(), o2.to_bits());
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn check_gradients_on_linear_and_quadratic() {
        // f(x) = sum(x): gradient exactly ones, error ~ machine precision.
        let mut g = Graph::new();
        let x = g.leaf("x", true);
        let s = g.sum(x);
        g.set_output(s);
        let x0 = T::vector(vec![0.3, -0.7, 2.0]);
        let mut bind = g.bindings();
        bind.set(x, x0.clone());
        let eval = g.evaluate(&bind).unwrap();
        let grads = eval.backward_scalar().unwrap();
        let f = |xv: &T| -> Result<f64, GraphError> {
            let mut b = g.bindings();
            b.set(x, xv.clone());
            Ok(g.evaluate(&b)?.output().item())
        };
        let err = check_gradients(f, grads.leaf(x).unwrap(), &x0, 1e-5).unwrap();
        assert!(err < 1e-9, "linear error {err}");

        // f(x) = ||x||² at (1,1): analytic (2,2), error < 1e-8 with h = 1e-5.
        let mut g2 = Graph::new();
        let x2 = g2.leaf("x", true);
        let sq = g2.mul(x2, x2);
        let s2 = g2.sum(sq);
        g2.set_output(s2);
        let x0 = T::vector(vec![1.0, 1.0]);
        let mut bind = g2.bindings();
        bind.set(x2, x0.clone());
        let eval = g2.evaluate(&bind).unwrap();
        let grads = eval.backward_scalar().unwrap();
        assert_eq!(grads.leaf(x2).unwrap().data(), &[2.0, 2.0]);
        let f = |xv: &T| -> Result<f64, GraphError> {
            let mut b = g2.bindings();
            b.set(x2, xv.clone());
            Ok(g2.evaluate(&b)?.output().item())
        };
        let err = check_gradients(f, grads.leaf(x2).unwrap(), &x0, 1e-5).unwrap();
        assert!(err < 1e-8, "quadratic error {err}");
    }

    #[test]
    fn gaussian_log_prob_gradients_match_finite_differences() {
        let mut rng = seed_rng(11);
        for _ in 0..10 {
            let d = 3;
            let mean = T::from_fn(&[d], |_| rng.random_range(-1.0..1.0));
            let ls = T::from_fn(&[d], |_| rng.random_range(-1.0..0.5));
            let act = T::from_fn(&[d], |_| rng.random_range(-1.5..1.5));

            let mut g = Graph::new();
            let m = g.leaf("m", true);
            let l = g.leaf("ls", true);
            let a = g.leaf("a", true);
            let lp = g.gaussian_log_prob(m, l, a);
            g.set_output(lp);

            let mut bind = g.bindings();
            bind.set(m, mean.clone());
            bind.set(l, ls.clone());
            bind.set(a, act.clone());
            let eval = g.evaluate(&bind).unwrap();
            let grads = eval.backward_scalar().unwrap();

            for (leaf, base) in [(m, &mean), (l, &ls), (a, &act)] {
                let f = |v: &T| -> Result<f64, GraphError> {
                    let mut b = g.bindings();
                    b.set(m, if leaf == m { v.clone() } else { mean.clone() });
                    b.set(l, if leaf == l { v.clone() } else { ls.clone() });
                    b.set(a, if leaf == a { v.clone() } else { act.clone() });
                    Ok(g.evaluate(&b)?.output().item())
                };
                let err = check_gradients(f, grads.leaf(leaf).unwrap(), base, 1e-5).unwrap();
                assert!(err < 1e-7, "gaussian logp grad error {err}");
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf("x", true);
        let y = g.mul(x, x);
        let s = g.sum(y);
        g.set_output(s);
        let mut bind = g.bindings();
        bind.set(x, TensorBase::<f32>::vector(vec![3.0]));
        let eval = g.evaluate(&bind).unwrap();
        assert_eq!(eval.output().item(), 9.0);
        let grads = eval.backward_scalar().unwrap();
        assert_eq!(grads.leaf(x).unwrap().data(), &[6.0]);
    }
}
