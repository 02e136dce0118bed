use super::shape::{check_axis, split_axis};
use super::{BackwardOp, Real, Tensor};
use crate::error::Result;

#[derive(Clone, Copy)]
enum Reduce {
    Sum,
    Mean,
    Max,
}

struct ReduceBackward {
    kind: Reduce,
    outer: usize,
    extent: usize,
    inner: usize,
    /// Winning position along the axis for each output (max only).
    argmax: Vec<usize>,
}

impl<T: Real> BackwardOp<T> for ReduceBackward {
    fn name(&self) -> &'static str {
        match self.kind {
            Reduce::Sum => "reduce_sum",
            Reduce::Mean => "reduce_mean",
            Reduce::Max => "reduce_max",
        }
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (outer, extent, inner) = (self.outer, self.extent, self.inner);
        let mut g = vec![T::zero(); outer * extent * inner];
        let scale = match self.kind {
            Reduce::Mean => T::one() / T::of(extent as f64),
            _ => T::one(),
        };
        for o in 0..outer {
            for i in 0..inner {
                let gv = grad[o * inner + i];
                match self.kind {
                    Reduce::Max => {
                        let k = self.argmax[o * inner + i];
                        g[(o * extent + k) * inner + i] += gv;
                    }
                    _ => {
                        for k in 0..extent {
                            g[(o * extent + k) * inner + i] += gv * scale;
                        }
                    }
                }
            }
        }
        vec![Some(g)]
    }
}

fn reduce<T: Real>(x: &Tensor<T>, axis: usize, kind: Reduce) -> Result<Tensor<T>> {
    let name = match kind {
        Reduce::Sum => "reduce_sum",
        Reduce::Mean => "reduce_mean",
        Reduce::Max => "reduce_max",
    };
    check_axis(name, x.shape(), axis)?;
    let (outer, extent, inner) = split_axis(x.shape(), axis);
    if extent == 0 {
        return Err(crate::Error::shape(name, "cannot reduce an empty axis"));
    }
    let d = x.data();
    let mut out = vec![T::zero(); outer * inner];
    let mut argmax = Vec::new();
    if let Reduce::Max = kind {
        argmax = vec![0; outer * inner];
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| d[(o * extent + k) * inner + i];
            let slot = o * inner + i;
            match kind {
                Reduce::Max => {
                    let mut best = 0;
                    for k in 1..extent {
                        if at(k) > at(best) {
                            best = k;
                        }
                    }
                    argmax[slot] = best;
                    out[slot] = at(best);
                }
                _ => {
                    let mut s = T::zero();
                    for k in 0..extent {
                        s += at(k);
                    }
                    out[slot] = match kind {
                        Reduce::Mean => s / T::of(extent as f64),
                        _ => s,
                    };
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Tensor::from_op(
        name,
        shape,
        out,
        vec![x.clone()],
        ReduceBackward {
            kind,
            outer,
            extent,
            inner,
            argmax,
        },
    )
}

impl<T: Real> Tensor<T> {
    /// Sum over `axis`, which is removed from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        reduce(self, axis, Reduce::Sum)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        reduce(self, axis, Reduce::Mean)
    }

    /// Maximum over `axis`; the gradient goes to the first maximal entry.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor<T>> {
        reduce(self, axis, Reduce::Max)
    }

    /// Scalar sum of every element.
    pub fn sum_all(&self) -> Result<Tensor<T>> {
        self.reshape(&[self.numel()])?.sum_axis(0)
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        self.reshape(&[self.numel()])?.mean_axis(0)
    }
}
