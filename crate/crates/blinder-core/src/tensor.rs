//! Dense n-dimensional tensors over `f32` or `f64`.
//!
//! Everything in the network core is generic over [`Element`] so that the
//! production models run in 32-bit while gradient checks against finite
//! differences run in 64-bit. Data is stored flat in row-major order.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

/// Scalar element type of tensors: `f32` in production, `f64` in
/// numerical-verification tests.
pub trait Element:
    Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Copy + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

/// Errors raised by tensor construction and shape-sensitive operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    /// Shape product disagrees with the data length.
    ShapeMismatch { expected: usize, actual: usize },
    /// Elementwise operation on tensors of different shapes.
    ShapeConflict,
    /// A non-finite value (NaN or infinity) was produced.
    NonFinite,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { expected, actual } => {
                write!(f, "shape expects {expected} elements, data has {actual}")
            }
            TensorError::ShapeConflict => write!(f, "tensor shapes do not agree"),
            TensorError::NonFinite => write!(f, "non-finite value in tensor"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TensorError {}

/// A dense tensor: a shape plus a flat row-major data buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor from a shape and matching flat data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// A zero-filled tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    /// A 1-D tensor over the given values.
    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Reinterprets the tensor with a new shape of equal element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Returns an error if any element is NaN or infinite.
    pub fn ensure_finite(&self) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite)
        }
    }

    /// In-place `self += scale * other`. Shapes must agree.
    pub fn add_scaled(&mut self, other: &Tensor<T>, scale: T) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeConflict);
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }

    /// Euclidean norm of the flattened data, accumulated in 64-bit.
    pub fn norm_l2(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.into_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Casts elementwise into another element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.into_f64())).collect(),
        }
    }
}
