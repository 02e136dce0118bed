//! Selective fusion of branch outputs.
//!
//! In selective mode the branch outputs are summed, optionally filtered by a
//! depthwise `k x k` convolution, pooled to one value per channel, turned into
//! `[C, n]` logits by a bottleneck MLP and normalized with a softmax over the
//! `n` strategies. The fused map is the per-channel convex combination of the
//! branch outputs under those weights. The elementwise max/average modes
//! replace the whole module with a parameter-free reduction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{join, Activation, Ctx, Init, Linear, Module};
use crate::tensor::{Conv2dSpec, Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Average,
    Max,
    L2,
    Stochastic,
}

impl Pooling {
    pub const ALL: [Pooling; 4] = [Pooling::Average, Pooling::Max, Pooling::L2, Pooling::Stochastic];

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Average => "average",
            Pooling::Max => "max",
            Pooling::L2 => "l2",
            Pooling::Stochastic => "stochastic",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pooling::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown pooling method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Selective,
    Max,
    Average,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Selective, Aggregation::Max, Aggregation::Average];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Selective => "selective",
            Aggregation::Max => "max",
            Aggregation::Average => "average",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregation::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown aggregation mode {s:?}")))
    }
}

/// Hyperparameters of the fusion unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectiveConfig {
    /// Depthwise kernel size applied before pooling; 1 disables the filter.
    pub kernel: usize,
    pub pooling: Pooling,
    pub mode: Aggregation,
    /// Bottleneck reduction ratio of the weight MLP.
    pub reduction: usize,
}

impl Default for SelectiveConfig {
    fn default() -> Self {
        SelectiveConfig {
            kernel: 3,
            pooling: Pooling::Average,
            mode: Aggregation::Selective,
            reduction: 4,
        }
    }
}

impl SelectiveConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("selective kernel must be odd, got {}", self.kernel)));
        }
        if self.reduction == 0 || !channels.is_multiple_of(self.reduction) {
            return Err(Error::Config(format!(
                "reduction ratio {} does not divide {channels} channels",
                self.reduction
            )));
        }
        Ok(())
    }
}

fn same_shapes<T: Real>(op: &'static str, branches: &[Tensor<T>]) -> Result<()> {
    let first = branches.first().ok_or_else(|| Error::shape(op, "no branch outputs"))?;
    for b in branches {
        if b.shape() != first.shape() {
            return Err(Error::shape(
                op,
                format!("branch shapes differ: {:?} vs {:?}", b.shape(), first.shape()),
            ));
        }
    }
    Ok(())
}

/// Elementwise sum of the branch outputs.
pub fn fuse_sum<T: Real>(branches: &[Tensor<T>]) -> Result<Tensor<T>> {
    same_shapes("fuse_sum", branches)?;
    let mut acc = branches[0].clone();
    for b in &branches[1..] {
        acc = acc.add(b)?;
    }
    Ok(acc)
}

/// Reduces an `[H, W, C]` map to a `[C]` descriptor.
///
/// Stochastic pooling samples one position per channel (probabilities are a
/// softmax over that channel's activations) in training mode and returns the
/// probability-weighted mean in evaluation mode.
pub fn pool_global<T: Real>(f: &Tensor<T>, method: Pooling, ctx: &Ctx) -> Result<Tensor<T>> {
    let &[h, w, c] = f.shape() else {
        return Err(Error::shape("pool_global", format!("expected [H, W, C], got {:?}", f.shape())));
    };
    let x = f.reshape(&[h * w, c])?;
    match method {
        Pooling::Average => x.mean_axis(0),
        Pooling::Max => x.max_axis(0),
        Pooling::L2 => x.square()?.mean_axis(0)?.shift(1e-12)?.sqrt(),
        Pooling::Stochastic => {
            let probs = x.softmax(0)?;
            if !ctx.training {
                return probs.mul(&x)?.sum_axis(0);
            }
            let p = probs.data();
            let mut mask = vec![T::zero(); h * w * c];
            ctx.with_rng(|rng| {
                for ch in 0..c {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = h * w - 1;
                    for pos in 0..h * w {
                        acc += p[pos * c + ch].as_f64();
                        if u < acc {
                            pick = pos;
                            break;
                        }
                    }
                    mask[pick * c + ch] = T::one();
                }
            });
            x.mul(&Tensor::from_vec(&[h * w, c], mask)?)?.sum_axis(0)
        }
    }
}

/// Per-channel softmax over `n` strategies applied to `[C * n]` logits laid out
/// channel-major (`logits[c * n + m]`).
pub fn strategy_softmax<T: Real>(logits: &Tensor<T>, channels: usize, n: usize) -> Result<Tensor<T>> {
    logits.reshape(&[channels, n])?.softmax(1)
}

/// `sum_m weights[:, m] * F_m`, broadcast over spatial positions.
pub fn selective_combine<T: Real>(branches: &[Tensor<T>], weights: &Tensor<T>) -> Result<Tensor<T>> {
    same_shapes("selective_combine", branches)?;
    let c = *branches[0].shape().last().unwrap_or(&0);
    if weights.shape() != [c, branches.len()] {
        return Err(Error::shape(
            "selective_combine",
            format!(
                "weights {:?} do not match {} branches of {:?}",
                weights.shape(),
                branches.len(),
                branches[0].shape()
            ),
        ));
    }
    let mut acc: Option<Tensor<T>> = None;
    for (m, f) in branches.iter().enumerate() {
        let p = weights.slice(1, m, 1)?.reshape(&[c])?;
        let term = f.mul(&p)?;
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one branch"))
}

/// Learnable part of the selective mode.
pub struct SelectiveWeights<T: Real> {
    /// Depthwise `[k, k, 1, C]` filter and bias, present when `k > 1`.
    pub filter: Option<(Tensor<T>, Tensor<T>)>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

pub struct SelectiveModule<T: Real> {
    pub config: SelectiveConfig,
    pub channels: usize,
    pub strategies: usize,
    /// `None` in the elementwise max/average modes.
    pub weights: Option<SelectiveWeights<T>>,
}

impl<T: Real> SelectiveModule<T> {
    pub fn new(init: &mut Init, channels: usize, strategies: usize, config: &SelectiveConfig) -> Result<Self> {
        config.validate(channels)?;
        if strategies == 0 {
            return Err(Error::Config("selective module needs at least one strategy".into()));
        }
        let weights = match config.mode {
            Aggregation::Selective => {
                let k = config.kernel;
                let filter = if k > 1 {
                    // starts as the identity filter
                    let mut dirac = vec![0.0; k * k * channels];
                    let centre = (k / 2) * k + k / 2;
                    dirac[centre * channels..(centre + 1) * channels].fill(1.0);
                    Some((init.values(&[k, k, 1, channels], &dirac)?, init.constant(&[channels], 0.0)?))
                } else {
                    None
                };
                let hidden = channels / config.reduction;
                Some(SelectiveWeights {
                    filter,
                    fc1: Linear::new(init, channels, hidden, true)?,
                    fc2: Linear::new(init, hidden, channels * strategies, true)?,
                })
            }
            Aggregation::Max | Aggregation::Average => None,
        };
        Ok(SelectiveModule {
            config: config.clone(),
            channels,
            strategies,
            weights,
        })
    }

    /// `[C, n]` strategy weights from a pooled `[C]` descriptor.
    pub fn selective_weights(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self
            .weights
            .as_ref()
            .ok_or_else(|| Error::Config("strategy weights exist only in selective mode".into()))?;
        let g = g.reshape(&[1, self.channels])?;
        let hidden = Activation::Gelu.apply(&w.fc1.forward(&g)?)?;
        strategy_softmax(&w.fc2.forward(&hidden)?, self.channels, self.strategies)
    }

    /// Fused map before pooling (sum, then the optional depthwise filter).
    pub fn fused_descriptor_map(&self, branches: &[Tensor<T>]) -> Result<Tensor<T>> {
        let fused = fuse_sum(branches)?;
        match self.weights.as_ref().and_then(|w| w.filter.as_ref()) {
            Some((kernel, bias)) => {
                let spec = Conv2dSpec {
                    groups: self.channels,
                    ..Conv2dSpec::default()
                };
                fused.conv2d(kernel, spec)?.add(bias)
            }
            None => Ok(fused),
        }
    }

    /// Strategy weights for a set of branch outputs.
    pub fn weights_for(&self, branches: &[Tensor<T>], ctx: &Ctx) -> Result<Tensor<T>> {
        let f = self.fused_descriptor_map(branches)?;
        let g = pool_global(&f, self.config.pooling, ctx)?;
        self.selective_weights(&g)
    }

    pub fn forward(&self, branches: &[Tensor<T>], ctx: &Ctx) -> Result<Tensor<T>> {
        if branches.len() != self.strategies {
            return Err(Error::shape(
                "selective_module",
                format!("expected {} branch outputs, got {}", self.strategies, branches.len()),
            ));
        }
        same_shapes("selective_module", branches)?;
        match self.config.mode {
            Aggregation::Selective => {
                let p = self.weights_for(branches, ctx)?;
                selective_combine(branches, &p)
            }
            Aggregation::Max => {
                let mut acc = branches[0].clone();
                for b in &branches[1..] {
                    acc = acc.maximum(b)?;
                }
                Ok(acc)
            }
            Aggregation::Average => fuse_sum(branches)?.scale(1.0 / branches.len() as f64),
        }
    }
}

impl<T: Real> Module<T> for SelectiveModule<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Some(w) = &self.weights {
            if let Some((k, b)) = &w.filter {
                f(&join(prefix, "filter.kernel"), k);
                f(&join(prefix, "filter.bias"), b);
            }
            w.fc1.visit(&join(prefix, "fc1"), f);
            w.fc2.visit(&join(prefix, "fc2"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(w) = &mut self.weights {
            if let Some((k, b)) = &mut w.filter {
                f(&join(prefix, "filter.kernel"), k);
                f(&join(prefix, "filter.bias"), b);
            }
            w.fc1.visit_mut(&join(prefix, "fc1"), f);
            w.fc2.visit_mut(&join(prefix, "fc2"), f);
        }
    }
}
