//! Dense tensors, a recording tape for reverse-mode differentiation, and an
//! eager evaluator that shares the same numerical kernels.
//!
//! Network code is written once against [`Backend`]; the [`Tape`] backend
//! records every operation so that [`Tape::backward`] can propagate
//! gradients, while [`Eager`] evaluates and drops intermediates as it goes.

mod eager;
pub mod kernels;
mod tape;

pub use eager::Eager;
pub use tape::{Gradients, OpKind, Tape, Var};

use crate::error::{Error, Result};

/// Reduction used by the global pooling operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// An n-dimensional array of `f64` in row-major order.
///
/// The network layout is `batch × channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                "data length",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[1], value)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Clears any accumulated gradient. Gradients accumulate across
    /// backward passes until this is called.
    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                "gradient length",
                format!("expected {}, got {}", self.data.len(), grad.len()),
            ));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, g)| *a += g),
            None => self.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-parameter gradients produced by one backward pass.
pub type ParamGrads = Vec<(ParamId, Vec<f64>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Owns the learnable tensors of a model. Names are unique and shapes are
/// fixed once registered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid("parameter name", format!("duplicate `{name}`")));
        }
        self.params.push(Parameter {
            name,
            tensor: tensor.with_requires_grad(true),
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn accumulate(&mut self, grads: &[(ParamId, Vec<f64>)]) -> Result<()> {
        for (id, g) in grads {
            self.params[id.0].tensor.accumulate_grad(g)?;
        }
        Ok(())
    }
}

/// The operations network layers need. Implemented by [`Tape`] (recording)
/// and [`Eager`] (inference only).
pub trait Backend {
    type Value: Clone;

    fn param(&mut self, id: ParamId) -> Self::Value;
    fn shape(&self, v: &Self::Value) -> Vec<usize>;

    fn conv2d(
        &mut self,
        input: &Self::Value,
        weight: &Self::Value,
        bias: &Self::Value,
        pad: usize,
        stride: usize,
    ) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;
    fn pool_spatial(&mut self, x: &Self::Value, mode: PoolMode) -> Result<Self::Value>;
    fn pool_channel(&mut self, x: &Self::Value, mode: PoolMode) -> Result<Self::Value>;
    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn slice_channels(&mut self, x: &Self::Value, start: usize, len: usize)
        -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
}

/// Concatenates several values along the channel axis, left to right.
pub fn concat_all<B: Backend>(backend: &mut B, parts: &[B::Value]) -> Result<B::Value> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::invalid("concat", "no operands"))?;
    rest.iter()
        .try_fold(first.clone(), |acc, p| backend.concat_channels(&acc, p))
}
