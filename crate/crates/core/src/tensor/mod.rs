//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! Everything the encoder-decoder needs is expressed as operations on a
//! [`Tape`]: matrix products, row-wise softmax, layer normalization, GELU,
//! structural ops (concat, slice, gather) and the two loss primitives
//! (cross-entropy and KL divergence). The engine is generic over the float
//! type so the same graph can be replayed in `f64` for finite-difference
//! checks while training runs in `f32`.

mod optim;
mod tape;

pub use optim::{AdamW, AdamWConfig, AdamWState, ParamSlot};
pub use tape::{Tape, Var};

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumCast};
use thiserror::Error;

/// Float element type accepted by the engine (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + NumCast + Debug + Default + Send + Sync + std::iter::Sum + 'static
{
    fn lit(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("float literal")
    }

    fn to_f64_lossy(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("empty loss: every position is ignored")]
    EmptyLoss,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("row {row} of the target distribution sums to {sum}, expected 1")]
    Unnormalized { row: usize, sum: f64 },
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
}

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Invalid {
                op: "from_rows",
                msg: "ragged rows".into(),
            });
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    /// `(rows, cols)` view of a matrix; a 1-d tensor is treated as a single row.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            [c] => Some((1, *c)),
            _ => None,
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let (_, c) = self.dims2().expect("row() on a non-matrix");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| <U as NumCast>::from(x).expect("cast"))
                .collect(),
        }
    }
}
