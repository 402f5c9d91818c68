//! Dense row-major tensors (rank 0..=2) used by the autodiff graph and the
//! networks. Deliberately minimal: no views, no broadcasting beyond what the
//! graph ops define.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Dense tensor with explicit shape. `data.len() == shape.iter().product()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorBase<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> TensorBase<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape, data }
    }

    pub fn scalar(v: F) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { shape: vec![rows, cols], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![F::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when interpreted as a batch: `[n, d] -> n`, `[d] -> 1`.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Trailing dimension: `[n, d] -> d`, `[d] -> d`, scalar -> 1.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Sole element of a rank-0 (or single-element) tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.data.len(), 1, "item() on tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.data.iter()
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v)
    }

    /// Squared L2 norm of the flat data.
    pub fn norm_sq(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v * v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_accessors() {
        let t = TensorBase::<f64>::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
        assert_eq!(t.sum(), 21.0);

        let v = TensorBase::<f64>::vector(vec![3.0, 4.0]);
        assert_eq!(v.rows(), 1);
        assert_eq!(v.cols(), 2);
        assert_eq!(v.norm_sq(), 25.0);

        let s = TensorBase::<f32>::scalar(2.5);
        assert_eq!(s.item(), 2.5);
        assert_eq!(s.ndim(), 0);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn length_invariant_enforced() {
        let _ = TensorBase::<f64>::new(vec![2, 2], vec![1.0, 2.0, 3.0]);
    }
}
