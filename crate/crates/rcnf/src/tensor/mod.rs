//! Dense n-dimensional tensors with reverse-mode differentiation.
//!
//! [`Tensor`] is a plain row-major value array. Differentiation runs through
//! a [`Tape`]: a forward pass records one node per operation, `backward`
//! walks the record once in reverse and fills in leaf gradients. A tape lives
//! for one forward/backward round and is then dropped.
//!
//! Everything is generic over [`Scalar`]: `f32` is the training type, `f64`
//! exists so gradients can be verified against central finite differences at
//! full precision.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{max_relative_error, numerical_gradient, relative_error};
pub use tape::{ReduceKind, Tape, Var};

use crate::error::{Error, Result};

/// Element type of a tensor: `f32` for training, `f64` for verification.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Dense row-major value array. Rank 0 (empty shape) is a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    /// Build a tensor from a shape and matching row-major data.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                shape,
                detail: "extents must be positive".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                detail: format!("shape holds {} elements, data holds {}", numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![F::zero(); numel],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// 1-D tensor from a slice.
    pub fn from_slice(values: &[F]) -> Result<Self> {
        Tensor::new(vec![values.len()], values.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// The single value of a rank-0 or one-element tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1, "item() on a {}-element tensor", self.numel());
        self.data[0]
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshaped(&self, new_shape: impl Into<Vec<usize>>) -> Result<Self> {
        let new_shape = new_shape.into();
        if new_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                shape: new_shape,
                detail: "extents must be positive".into(),
            });
        }
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!(
                    "cannot view {:?} ({} elements) as {:?} ({} elements)",
                    self.shape,
                    self.numel(),
                    new_shape,
                    numel
                ),
            });
        }
        Ok(Tensor {
            shape: new_shape,
            data: self.data.clone(),
        })
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert elementwise to another scalar type.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| G::from_f64(v.as_f64())).collect(),
        }
    }

    /// Fill with uniform values in `[-limit, limit)` drawn from `rng`.
    pub fn fill_uniform<R: rand::Rng + ?Sized>(&mut self, rng: &mut R, limit: f64) {
        for v in &mut self.data {
            *v = F::from_f64(rng.random_range(-limit..limit));
        }
    }
}

/// Softmax along `axis`, computed directly on values with no tape.
pub fn softmax_values<F: Scalar>(x: &Tensor<F>, axis: usize) -> Tensor<F> {
    debug_assert!(axis < x.rank());
    ops::softmax_forward(x, axis)
}

/// Capsule squash along the last axis, computed directly on values.
pub fn squash_values<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    ops::squash_forward(x)
}

/// Coupling-weighted capsule sum, computed directly on values.
pub fn coupled_sum_values<F: Scalar>(uhat: &Tensor<F>, couplings: &Tensor<F>) -> Tensor<F> {
    ops::coupled_sum_forward(uhat, couplings)
}

/// Per-vector Euclidean norm along the last axis, computed directly on values.
pub fn norm_last_axis_values<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    debug_assert!(x.rank() >= 1);
    ops::norm_last_axis_forward(x)
}

/// Index of the largest value in each row of a [N,J] tensor; ties go to the
/// lowest index.
pub fn argmax_rows<F: Scalar>(t: &Tensor<F>) -> Vec<usize> {
    debug_assert_eq!(t.rank(), 2);
    let cols = t.shape()[1];
    t.data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Row-major strides for a shape.
pub(crate) fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
