//! Dense tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain shape + `f64` buffer. Differentiable computation
//! happens on a [`Graph`]: leaves are added with [`Graph::leaf`], operations
//! return [`Var`] handles, and [`Graph::backward`] fills gradients for every
//! tensor that requires them. [`grad_check`] is the finite-difference oracle
//! used throughout the test suite.
//!
//! Scalars are `f64` everywhere; a scalar value is a tensor of shape `[1]`.

mod bind;
mod gradcheck;
mod graph;

pub use bind::{flatten_params, Binder, FlatBinder, LeafBinder};
pub use gradcheck::{grad_check, GRAD_CHECK_EPS};
pub use graph::{Graph, Var};

use rand::Rng;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` values in row-major order.
///
/// `grad` is populated on tensors stored in a [`Graph`] after
/// [`Graph::backward`]; free-standing tensors carry `grad = None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.is_empty() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape: shape.clone(),
                reason: format!("{} data values for shape {:?}", data.len(), shape),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![1.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// Shape-`[1]` tensor holding one value.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// I.i.d. uniform values on `[-bound, bound)`; the initializer for all
    /// weight matrices (callers pass `1/sqrt(fan_in)`).
    pub fn uniform<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(|_| rng.gen_range(-bound..bound)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a gradient target (builder style).
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Gradient buffer; `None` until a backward pass populates it.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, g: Vec<f64>) {
        debug_assert_eq!(g.len(), self.data.len());
        self.grad = Some(g);
    }

    /// True when every value is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
