//! Dense row-major tensors with a tape-based reverse-mode autodiff graph.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Graph`] and addressed through [`Var`] handles. A graph is built fresh for
//! every forward pass and consumed by [`Graph::backward`].

mod graph;
pub mod kernels;
pub mod macs;

use std::any::Any;
use std::fmt::Debug;
use std::sync::Arc;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{Gradients, Graph, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis { op: &'static str, axis: usize, rank: usize },
    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("binary targets must be 0 or 1, found {0}")]
    InvalidTarget(f64),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Scalar element type. `f64` is the reference precision, `f32` the fast mode.
pub trait Real: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn erf(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

/// Dense tensor value: `data.len() == shape.iter().product()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::InvalidShape { shape, len: data.len() });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
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
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_data(self) -> Vec<T> {
        Arc::unwrap_or_clone(self.data)
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) || shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::InvalidShape {
                shape,
                len: self.data.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        kernels::check_permutation(axes, self.rank())?;
        let (shape, data) = kernels::permute(&self.data, &self.shape, axes);
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn roll(&self, shift: isize, axis: usize) -> Result<Self> {
        check_axis("roll", axis, self.rank())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: Arc::new(kernels::roll(&self.data, &self.shape, shift, axis)),
        })
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        check_axis("softmax", axis, self.rank())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: Arc::new(kernels::softmax(&self.data, &self.shape, axis)),
        })
    }

    pub fn sigmoid(&self) -> Self {
        self.map(kernels::sigmoid)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        if let Some(same) = (self as &dyn Any).downcast_ref::<Tensor<U>>() {
            return same.clone();
        }
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::from_f64(Real::to_f64(*v))).collect()),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&v| Real::to_f64(v)).collect()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(TensorError::InvalidAxis { op, axis, rank })
    } else {
        Ok(())
    }
}
