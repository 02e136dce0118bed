use super::{BackwardOp, Real, Tensor};
use crate::error::{Error, Result};

/// `out[m,n] += a[m,k] * b[k,n]`, row-major, i-k-j loop order.
pub(crate) fn gemm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
fn gemm_nt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
fn gemm_tn_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

struct MatmulBackward {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Real> BackwardOp<T> for MatmulBackward {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let ga = inputs[0].requires_grad().then(|| {
            let mut ga = vec![T::zero(); m * k];
            gemm_nt_acc(grad, inputs[1].data(), &mut ga, m, k, n);
            ga
        });
        let gb = inputs[1].requires_grad().then(|| {
            let mut gb = vec![T::zero(); k * n];
            gemm_tn_acc(inputs[0].data(), grad, &mut gb, m, k, n);
            gb
        });
        vec![ga, gb]
    }
}

impl<T: Real> Tensor<T> {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(Error::shape(
                "matmul",
                format!("expected 2-D operands, got {:?} and {:?}", self.shape(), other.shape()),
            ));
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.data(), other.data(), &mut out, m, k, n);
        Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            MatmulBackward { m, k, n },
        )
    }
}
