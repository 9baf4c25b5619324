//! Dense tensor engine with reverse-mode differentiation.
//!
//! [`Tensor`] is a plain shape + row-major buffer. Differentiable
//! computation happens on a [`Graph`]: operations evaluate eagerly,
//! append an operation record, and [`Graph::backward`] walks the records
//! in exact reverse order accumulating adjoints. Non-finite values
//! anywhere in a forward or backward pass are a hard error.

mod adam;
mod graph;
pub mod gradcheck;
mod kernels;

pub use adam::{adam_step, AdamState};
pub use graph::{Gradients, Graph, Value};

use crate::num::{abs_sum_f64, Scalar};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: String, detail: String },
    #[error("non-finite values in {context}")]
    NotFinite { context: String },
    #[error("{0}")]
    Invalid(String),
}

impl TensorError {
    pub(crate) fn shape(op: &str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch {
            op: op.to_string(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// N-dimensional real-valued array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor, validating that the extents are positive, the
    /// element count matches and every value is finite.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Invalid(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::shape(
                "Tensor::new",
                format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            ));
        }
        if !abs_sum_f64(&data).is_finite() {
            return Err(TensorError::NotFinite {
                context: "Tensor::new".to_string(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
            requires_grad: false,
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel],
            requires_grad: false,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
            requires_grad: false,
        }
    }

    /// Mark the tensor as a differentiation leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Single element of a rank-1 tensor of length 1.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&x, &d)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(x < d, "index {x} out of range {d} in axis {i}");
            off = off * d + x;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    /// Cast element type; values pass through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// Largest absolute difference against another tensor of equal shape.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Uniform tensor in `[-limit, limit]` from the given RNG stream.
pub fn uniform_tensor<T: Scalar, R: rand::Rng>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        T::of_f64(rng.gen_range(-limit..=limit))
    })
}


/// Numeric kernels reused outside the graph (inference-time rules,
/// metric computation).
pub mod ops {
    pub use super::kernels::sigmoid;
    use super::Tensor;
    use crate::num::Scalar;

    /// Row softmax of an `[N,C]` tensor.
    pub fn softmax_rows_tensor<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
        let s = t.shape();
        assert_eq!(s.len(), 2, "softmax_rows_tensor: need [N,C]");
        Tensor::new(s, super::kernels::softmax_rows(t.data(), s[0], s[1])).expect("softmax")
    }
}
