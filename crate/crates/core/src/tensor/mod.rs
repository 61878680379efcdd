//! A small reverse-mode autodiff engine over dense `f64` arrays.
//!
//! Values live in a [`Graph`] tape that is rebuilt for every forward pass.
//! Trainable state lives in a [`ParameterStore`]; graph nodes created with
//! [`Graph::param`] read from it and [`Graph::backward`] returns gradients
//! that [`ParameterStore::accumulate`] adds back.

mod graph;
pub mod gradcheck;
mod linalg;
mod store;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use graph::{Gradients, Graph, Var};
pub use store::{Checkpoint, ParamId, Parameter, ParameterStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward needs a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("optimizer step without any gradient")]
    NoGradient,
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParameter(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

/// Dense row-major array. Most tensors are 2-D: `(channels, length)` for
/// the codec and `(positions, features)` for the language model.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(mismatch("tensor", format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor (first dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor (product of the remaining dimensions).
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }
}
