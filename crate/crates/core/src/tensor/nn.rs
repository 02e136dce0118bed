use super::shape::{check_axis, split_axis};
use super::{BackwardOp, Real, Tensor};
use crate::error::{Error, Result};

struct SoftmaxBackward {
    outer: usize,
    extent: usize,
    inner: usize,
}

impl<T: Real> BackwardOp<T> for SoftmaxBackward {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, _inputs: &[Tensor<T>], y: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (outer, extent, inner) = (self.outer, self.extent, self.inner);
        let mut g = vec![T::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * extent + k) * inner + i;
                let mut dot = T::zero();
                for k in 0..extent {
                    dot += grad[idx(k)] * y[idx(k)];
                }
                for k in 0..extent {
                    g[idx(k)] = y[idx(k)] * (grad[idx(k)] - dot);
                }
            }
        }
        vec![Some(g)]
    }
}

struct LayerNormBackward<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
    width: usize,
}

impl<T: Real> BackwardOp<T> for LayerNormBackward<T> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, inputs: &[Tensor<T>], _y: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let w = self.width;
        let gamma = inputs[1].data();
        let rows = grad.len() / w;
        let inv_w = T::one() / T::of(w as f64);
        let mut dx = inputs[0].requires_grad().then(|| vec![T::zero(); grad.len()]);
        let mut dgamma = vec![T::zero(); w];
        let mut dbeta = vec![T::zero(); w];
        for r in 0..rows {
            let g = &grad[r * w..(r + 1) * w];
            let xh = &self.xhat[r * w..(r + 1) * w];
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for c in 0..w {
                let d = g[c] * gamma[c];
                mean_d += d;
                mean_dx += d * xh[c];
                dgamma[c] += g[c] * xh[c];
                dbeta[c] += g[c];
            }
            mean_d *= inv_w;
            mean_dx *= inv_w;
            if let Some(dx) = dx.as_mut() {
                let rstd = self.rstd[r];
                for c in 0..w {
                    let d = g[c] * gamma[c];
                    dx[r * w + c] = rstd * (d - mean_d - xh[c] * mean_dx);
                }
            }
        }
        vec![
            dx,
            inputs[1].requires_grad().then_some(dgamma),
            inputs[2].requires_grad().then_some(dbeta),
        ]
    }
}

impl<T: Real> Tensor<T> {
    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * extent + k) * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..extent {
                    m = m.max(x[idx(k)]);
                }
                let mut s = T::zero();
                for k in 0..extent {
                    let e = (x[idx(k)] - m).exp();
                    y[idx(k)] = e;
                    s += e;
                }
                for k in 0..extent {
                    y[idx(k)] = y[idx(k)] / s;
                }
            }
        }
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            SoftmaxBackward {
                outer,
                extent,
                inner,
            },
        )
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let w = *self
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if gamma.shape() != [w] || beta.shape() != [w] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {:?} needs gamma/beta of [{w}], got {:?} and {:?}",
                    self.shape(),
                    gamma.shape(),
                    beta.shape()
                ),
            ));
        }
        let x = self.data();
        let rows = x.len() / w.max(1);
        let eps = T::of(eps);
        let inv_w = T::one() / T::of(w as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut y = vec![T::zero(); x.len()];
        let (g, b) = (gamma.data(), beta.data());
        for r in 0..rows {
            let row = &x[r * w..(r + 1) * w];
            let mean = row.iter().copied().sum::<T>() * inv_w;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_w;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..w {
                let h = (row[c] - mean) * rs;
                xhat[r * w + c] = h;
                y[r * w + c] = g[c] * h + b[c];
            }
        }
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            y,
            vec![self.clone(), gamma.clone(), beta.clone()],
            LayerNormBackward { xhat, rstd, width: w },
        )
    }
}
