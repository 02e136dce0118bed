use super::{BackwardOp, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Max => "maximum",
        }
    }

    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
            Binary::Max => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// Partial derivatives (d/da, d/db).
    #[inline]
    fn partials<T: Real>(self, a: T, b: T) -> (T, T) {
        match self {
            Binary::Add => (T::one(), T::one()),
            Binary::Sub => (T::one(), -T::one()),
            Binary::Mul => (b, a),
            Binary::Div => (T::one() / b, -a / (b * b)),
            Binary::Max => {
                if a >= b {
                    (T::one(), T::zero())
                } else {
                    (T::zero(), T::one())
                }
            }
        }
    }
}

/// Shapes are compatible when equal or when the shorter is a suffix of the longer.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long.ends_with(short) {
        Ok(long.to_vec())
    } else {
        Err(Error::shape(
            op,
            format!("{a:?} and {b:?} are not trailing-axis compatible"),
        ))
    }
}

struct BinaryBackward(Binary);

impl<T: Real> BackwardOp<T> for BinaryBackward {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let (na, nb) = (a.len(), b.len());
        let mut ga = inputs[0].requires_grad().then(|| vec![T::zero(); na]);
        let mut gb = inputs[1].requires_grad().then(|| vec![T::zero(); nb]);
        for i in 0..output.len() {
            let (x, y) = (a[i % na], b[i % nb]);
            let (da, db) = self.0.partials(x, y);
            if let Some(ga) = ga.as_mut() {
                ga[i % na] += grad[i] * da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[i % nb] += grad[i] * db;
            }
        }
        vec![ga, gb]
    }
}

fn binary<T: Real>(op: Binary, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = broadcast_shape(op.name(), a.shape(), b.shape())?;
    let (x, y) = (a.data(), b.data());
    let n: usize = shape.iter().product();
    let (na, nb) = (x.len(), y.len());
    let data = if na == nb {
        x.iter().zip(y).map(|(&p, &q)| op.apply(p, q)).collect()
    } else {
        (0..n).map(|i| op.apply(x[i % na], y[i % nb])).collect()
    };
    Tensor::from_op(op.name(), shape, data, vec![a.clone(), b.clone()], BinaryBackward(op))
}

/// Pointwise nonlinearities and simple maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Square,
    Softplus,
    /// tanh approximation of GELU.
    Gelu,
    Silu,
    /// `max(x, floor)`; gradient flows only where `x > floor`.
    ClampMin(f64),
    Scale(f64),
    Shift(f64),
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Softplus => "softplus",
            Unary::Gelu => "gelu",
            Unary::Silu => "silu",
            Unary::ClampMin(_) => "clamp_min",
            Unary::Scale(_) => "scale",
            Unary::Shift(_) => "shift",
        }
    }

    fn validate<T: Real>(self, x: &[T]) -> Result<()> {
        let bad = match self {
            Unary::Ln => x.iter().any(|&v| v <= T::zero()),
            Unary::Sqrt => x.iter().any(|&v| v < T::zero()),
            _ => false,
        };
        if bad {
            Err(Error::shape(self.name(), "argument outside the domain"))
        } else {
            Ok(())
        }
    }

    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Softplus => {
                // log(1 + e^x) without overflow
                x.max(T::zero()) + (-x.abs()).exp().ln_1p()
            }
            Unary::Gelu => {
                let inner = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
                T::of(0.5) * x * (T::one() + inner.tanh())
            }
            Unary::Silu => x * sigmoid(x),
            Unary::ClampMin(floor) => x.max(T::of(floor)),
            Unary::Scale(s) => x * T::of(s),
            Unary::Shift(s) => x + T::of(s),
        }
    }

    /// Derivative given input `x` and output `y`.
    #[inline]
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Neg => -T::one(),
            Unary::Exp => y,
            Unary::Ln => T::one() / x,
            Unary::Sqrt => {
                if y > T::zero() {
                    T::of(0.5) / y
                } else {
                    T::zero()
                }
            }
            Unary::Square => T::of(2.0) * x,
            Unary::Softplus => sigmoid(x),
            Unary::Gelu => {
                let c = T::of(GELU_C);
                let k = T::of(GELU_K);
                let th = (c * (x + k * x * x * x)).tanh();
                let sech2 = T::one() - th * th;
                T::of(0.5) * (T::one() + th)
                    + T::of(0.5) * x * sech2 * c * (T::one() + T::of(3.0) * k * x * x)
            }
            Unary::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Unary::ClampMin(floor) => {
                if x > T::of(floor) {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Scale(s) => T::of(s),
            Unary::Shift(_) => T::one(),
        }
    }
}

struct UnaryBackward(Unary);

impl<T: Real> BackwardOp<T> for UnaryBackward {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let g = x
            .iter()
            .zip(output)
            .zip(grad)
            .map(|((&x, &y), &g)| g * self.0.derivative(x, y))
            .collect();
        vec![Some(g)]
    }
}

impl<T: Real> Tensor<T> {
    pub fn unary(&self, op: Unary) -> Result<Tensor<T>> {
        op.validate(self.data())?;
        let data = self.data().iter().map(|&v| op.apply(v)).collect();
        Tensor::from_op(
            op.name(),
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            UnaryBackward(op),
        )
    }

    /// Elementwise sum; `other` may be a trailing-axis suffix (or vice versa).
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Div, self, other)
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Max, self, other)
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Neg)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Exp)
    }

    pub fn ln(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Ln)
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Sqrt)
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Square)
    }

    pub fn softplus(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Softplus)
    }

    pub fn gelu(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Gelu)
    }

    pub fn silu(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Silu)
    }

    pub fn clamp_min(&self, floor: f64) -> Result<Tensor<T>> {
        self.unary(Unary::ClampMin(floor))
    }

    pub fn scale(&self, s: f64) -> Result<Tensor<T>> {
        self.unary(Unary::Scale(s))
    }

    pub fn shift(&self, s: f64) -> Result<Tensor<T>> {
        self.unary(Unary::Shift(s))
    }
}
