//! Parameter containers and the small layers shared by every encoder.

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Anything that owns named trainable tensors.
///
/// Names are dot-joined paths (`stages.0.blocks.1.ssm.a_log`) and are stable
/// for a given configuration.
pub trait Module<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn zero_grad(&self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Seeded parameter initializer. Values are drawn in `f64` and then cast, so
/// `f32` and `f64` models built from the same seed agree up to rounding.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Normal(0, std) truncated to ±2 std by resampling.
    pub fn trunc_normal<T: Real>(&mut self, shape: &[usize], std: f64) -> Result<Tensor<T>> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let n: usize = shape.iter().product();
        let mut vals = Vec::with_capacity(n);
        while vals.len() < n {
            let v: f64 = normal.sample(&mut self.rng);
            if v.abs() <= 2.0 * std {
                vals.push(T::of(v));
            }
        }
        Tensor::param(shape, vals)
    }

    pub fn constant<T: Real>(&mut self, shape: &[usize], value: f64) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        Tensor::param(shape, vec![T::of(value); n])
    }

    pub fn values<T: Real>(&mut self, shape: &[usize], values: &[f64]) -> Result<Tensor<T>> {
        Tensor::param(shape, values.iter().map(|&v| T::of(v)).collect())
    }
}

/// Standard deviation of the truncated-normal initializer for projections.
pub const INIT_STD: f64 = 0.02;

/// Layer-norm epsilon used throughout.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Gelu,
    Silu,
}

impl Activation {
    pub fn apply<T: Real>(self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::Identity => Ok(x.clone()),
            Activation::Gelu => x.gelu(),
            Activation::Silu => x.silu(),
        }
    }
}

/// Per-forward state: train/eval mode and the seeded stream used by
/// stochastic layers. Never shared across threads.
pub struct Ctx {
    pub training: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl Ctx {
    pub fn eval() -> Self {
        Ctx {
            training: false,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(seed: u64) -> Self {
        Ctx {
            training: true,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }
}

/// `y = x W + b` over the last axis of a 2-D `[rows, in]` input.
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(init: &mut Init, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        Ok(Linear {
            weight: init.trunc_normal(&[d_in, d_out], INIT_STD)?,
            bias: if bias {
                Some(init.constant(&[d_out], 0.0)?)
            } else {
                None
            },
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Layer normalization over the channel (last) axis.
pub struct LayerNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(init: &mut Init, width: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: init.constant(&[width], 1.0)?,
            beta: init.constant(&[width], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.gamma, &self.beta, LN_EPS)
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
