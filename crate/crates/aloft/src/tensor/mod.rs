//! Reverse-mode differentiable tensors.
//!
//! [`Tensor`] is an immutable n-dimensional array of `f64` values in row-major
//! order. All arithmetic goes through a [`Tape`], which records every primitive
//! operation during the forward pass and replays the records in reverse to
//! accumulate gradients. Tapes are rebuilt on every forward pass; tensors whose
//! inputs are all untracked flow through without recording anything, so the
//! same code path serves both training and inference.
//!
//! [`fdcheck`] provides the central finite-difference self-check used
//! throughout the test suites to validate every gradient rule.

mod fd;
mod tape;

pub use fd::{check_gradients, FdReport};
pub use tape::{Gradients, Tape};

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("numeric error in {op}: {msg}")]
    Numeric { op: &'static str, msg: String },
    #[error("{op} requires a scalar, got shape {shape:?}")]
    NonScalar { op: &'static str, shape: Vec<usize> },
    #[error("{op}: tensor is not tracked on this tape")]
    NotTracked { op: &'static str },
}

/// Immutable n-dimensional `f64` array, row-major.
///
/// Cloning is cheap (the buffer is shared). A tensor optionally carries the id
/// of the tape node that produced it; a tensor without a node is a constant as
/// far as differentiation is concerned.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Arc<Vec<f64>>,
    pub(crate) requires_grad: bool,
    pub(crate) node: Option<usize>,
}

fn validate_shape(shape: &[usize], len: usize) -> Result<(), TensorError> {
    if shape.is_empty() {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "shape must have at least one dimension (use [1] for scalars)".into(),
        });
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "all dimensions must be >= 1".into(),
        });
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("shape implies {numel} elements, data has {len}"),
        });
    }
    Ok(())
}

impl Tensor {
    /// Builds a tensor, validating that `shape` is non-empty, has no zero
    /// dimensions, and multiplies out to `data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        validate_shape(&shape, data.len())?;
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("zeros: valid shape")
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![value; numel]).expect("full: valid shape")
    }

    /// Shape `[1]` tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value]).expect("scalar")
    }

    /// Rank-1 tensor of shape `[data.len()]`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data).expect("from_vec: non-empty data")
    }

    /// Wraps already-shared storage without copying it. Same shape rules as
    /// [`Tensor::new`].
    pub fn from_shared(shape: Vec<usize>, data: Arc<Vec<f64>>) -> Result<Tensor, TensorError> {
        validate_shape(&shape, data.len())?;
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            node: None,
        })
    }

    pub fn requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn is_requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the storage for in-place parameter updates. Copies
    /// the buffer first if it is shared, and detaches the tensor from any
    /// recorded graph since its value no longer matches the recording.
    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        self.node = None;
        Arc::make_mut(&mut self.data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    /// Copy of this tensor with one element replaced; used by the
    /// finite-difference checker. Drops any tape association.
    pub fn with_element(&self, index: usize, value: f64) -> Self {
        let mut data = self.data.as_ref().clone();
        data[index] = value;
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
            requires_grad: self.requires_grad,
            node: None,
        }
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy that shares storage but carries no tape association, so it
    /// enters any further graph as a constant.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad: false,
            node: None,
        }
    }
}
