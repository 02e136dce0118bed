use super::{numel, BackwardOp, Real, Tensor};
use crate::error::{Error, Result};

/// (outer, axis extent, inner) split of a row-major shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis < shape.len() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")))
    }
}

struct ReshapeBackward;

impl<T: Real> BackwardOp<T> for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.to_vec())]
    }
}

/// Source offset of every output element of a permutation.
fn permute_gather(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = numel(shape);
    let mut src = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..n {
        src.push(off);
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    src
}

struct GatherBackward {
    /// `out[i] = in[src[i]]`
    src: Vec<usize>,
    in_len: usize,
    name: &'static str,
}

impl<T: Real> BackwardOp<T> for GatherBackward {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let mut g = vec![T::zero(); self.in_len];
        for (&s, &gv) in self.src.iter().zip(grad) {
            g[s] += gv;
        }
        vec![Some(g)]
    }
}

struct ConcatBackward {
    axis_lens: Vec<usize>,
    outer: usize,
    inner: usize,
}

impl<T: Real> BackwardOp<T> for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let total: usize = self.axis_lens.iter().sum();
        let mut start = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for (t, &len) in inputs.iter().zip(&self.axis_lens) {
            if t.requires_grad() {
                let mut g = Vec::with_capacity(self.outer * len * self.inner);
                for o in 0..self.outer {
                    let base = (o * total + start) * self.inner;
                    g.extend_from_slice(&grad[base..base + len * self.inner]);
                }
                grads.push(Some(g));
            } else {
                grads.push(None);
            }
            start += len;
        }
        grads
    }
}

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            ReshapeBackward,
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        let valid = axes.len() == nd
            && axes.iter().all(|&a| a < nd && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(Error::shape(
                "permute",
                format!("{axes:?} is not a permutation of the axes of {:?}", self.shape()),
            ));
        }
        let src = permute_gather(self.shape(), axes);
        let data = src.iter().map(|&s| self.data()[s]).collect();
        let shape = axes.iter().map(|&a| self.shape()[a]).collect();
        Tensor::from_op(
            "permute",
            shape,
            data,
            vec![self.clone()],
            GatherBackward {
                src,
                in_len: self.numel(),
                name: "permute",
            },
        )
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.ndim() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("expected 2-D, got {:?}", self.shape()),
            ));
        }
        self.permute(&[1, 0])
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis("slice", self.shape(), axis)?;
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        if start + len > extent {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} exceeds axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let indices: Vec<usize> = (start..start + len).collect();
        self.gather_axis("slice", axis, &indices, outer, extent, inner)
    }

    /// Picks entries along `axis` by index; repeats are allowed.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor<T>> {
        check_axis("index_select", self.shape(), axis)?;
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        if let Some(bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(Error::shape(
                "index_select",
                format!("index {bad} out of range for axis {axis} of {:?}", self.shape()),
            ));
        }
        self.gather_axis("index_select", axis, indices, outer, extent, inner)
    }

    fn gather_axis(
        &self,
        name: &'static str,
        axis: usize,
        indices: &[usize],
        outer: usize,
        extent: usize,
        inner: usize,
    ) -> Result<Tensor<T>> {
        let mut src = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * extent + i) * inner;
                src.extend(base..base + inner);
            }
        }
        let data = src.iter().map(|&s| self.data()[s]).collect();
        let mut shape = self.shape().to_vec();
        shape[axis] = indices.len();
        Tensor::from_op(
            name,
            shape,
            data,
            vec![self.clone()],
            GatherBackward {
                src,
                in_len: self.numel(),
                name,
            },
        )
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        check_axis("concat", first.shape(), axis)?;
        for t in tensors {
            let compatible = t.ndim() == first.ndim()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} does not match {:?} off axis {axis}", t.shape(), first.shape()),
                ));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let axis_lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = axis_lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &len) in tensors.iter().zip(&axis_lens) {
                let chunk = len * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Tensor::from_op(
            "concat",
            shape,
            data,
            tensors.to_vec(),
            ConcatBackward {
                axis_lens,
                outer,
                inner,
            },
        )
    }
}
