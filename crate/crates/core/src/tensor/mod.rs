//! Dense row-major tensors with an attached reverse-mode tape.
//!
//! A [`Tensor`] is an immutable value. Every operation returns a new tensor and,
//! when any input requires a gradient, records a node pointing back at its
//! inputs. Calling [`Tensor::backward`] on a scalar walks that graph once in
//! reverse topological order and accumulates gradients on the leaves.
//!
//! The element type is a construction-time choice: models run in `f32`,
//! gradient checks run the same code in `f64`.

mod autograd;
mod conv;
mod elementwise;
mod linalg;
mod nn;
mod reduce;
mod scan;
mod shape;

pub use autograd::{is_grad_enabled, no_grad, BackwardOp};
pub use conv::{Conv2dSpec, Padding};
pub use elementwise::Unary;
pub use scan::selective_scan_blocked;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Floating-point element type usable as tensor storage.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + Default
    + 'static
{
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) struct Node<T: Real> {
    pub(crate) op: Box<dyn BackwardOp<T>>,
    pub(crate) inputs: Vec<Tensor<T>>,
}

pub(crate) struct Inner<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

/// N-dimensional array of finite values with an optional gradient.
pub struct Tensor<T: Real = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.inner.shape);
        if self.inner.data.len() <= 16 {
            d.field("data", &self.inner.data);
        }
        d.field("requires_grad", &self.inner.requires_grad).finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Real> Tensor<T> {
    /// Builds a constant tensor. Fails if the length does not match the shape
    /// or any value is NaN/Inf.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} needs {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        check_finite("from_vec", &data)?;
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Builds a trainable leaf.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Self::leaf(t.inner.shape.clone(), t.to_vec(), true))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn scalar(v: T) -> Result<Self> {
        Self::from_vec(&[], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![T::zero(); numel(shape)], false)
    }

    pub fn full(shape: &[usize], v: T) -> Result<Self> {
        Self::from_vec(shape, vec![v; numel(shape)])
    }

    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node: None,
            }),
        }
    }

    /// Wraps the result of an operation, recording a tape node when needed.
    pub(crate) fn from_op(
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        op: impl BackwardOp<T> + 'static,
    ) -> Result<Self> {
        debug_assert_eq!(numel(&shape), data.len());
        check_finite(op_name, &data)?;
        let requires_grad = autograd::is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| Node {
            op: Box::new(op),
            inputs,
        });
        Ok(Tensor {
            inner: Arc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node,
            }),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.inner.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(
                "item",
                format!("expected one element, shape {:?}", self.shape()),
            )),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    /// Same values, no history, no gradient.
    pub fn detach(&self) -> Self {
        Self::leaf(self.inner.shape.clone(), self.inner.data.clone(), false)
    }

    /// Accumulated gradient, if any backward pass reached this leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.inner.node.as_ref()
    }

    pub(crate) fn id(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }

    /// Converts between element types. The result is a constant.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::leaf(
            self.inner.shape.clone(),
            self.inner.data.iter().map(|v| U::of(v.as_f64())).collect(),
            false,
        )
    }
}
