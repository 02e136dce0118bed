//! Cross-scan selective state-space branch.
//!
//! The feature map is unrolled into four token sequences (row-major,
//! reversed row-major, column-major, reversed column-major), each sequence is
//! run through the selective scan, the outputs are put back on the grid and
//! summed, and a pointwise linear map mixes the channels.

use rand::Rng;

use super::expect_map;
use crate::nn::{join, Init, Linear, Module};
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Flattened row-major positions visited by each of the four scan orders.
pub fn scan_orders(h: usize, w: usize) -> [Vec<usize>; 4] {
    let row_major: Vec<usize> = (0..h * w).collect();
    let col_major: Vec<usize> = (0..w).flat_map(|j| (0..h).map(move |i| i * w + j)).collect();
    let rev = |v: &Vec<usize>| v.iter().rev().copied().collect::<Vec<_>>();
    [row_major.clone(), rev(&row_major), col_major.clone(), rev(&col_major)]
}

fn inverse(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (t, &p) in order.iter().enumerate() {
        inv[p] = t;
    }
    inv
}

/// Unrolls an `[H, W, C]` map into four `[H*W, C]` sequences.
pub fn cross_scan<T: Real>(v: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let &[h, w, c] = v.shape() else {
        return Err(Error::shape("cross_scan", format!("expected [H, W, C], got {:?}", v.shape())));
    };
    let tokens = v.reshape(&[h * w, c])?;
    let orders = scan_orders(h, w);
    let [a, b, cc, d] = orders.each_ref().map(|o| tokens.index_select(0, o));
    Ok([a?, b?, cc?, d?])
}

/// Puts four directional sequences back on the `h x w` grid and sums them.
pub fn cross_merge<T: Real>(seqs: &[Tensor<T>; 4], h: usize, w: usize) -> Result<Tensor<T>> {
    let orders = scan_orders(h, w);
    let mut total: Option<Tensor<T>> = None;
    for (seq, order) in seqs.iter().zip(&orders) {
        if seq.ndim() != 2 || seq.shape()[0] != h * w {
            return Err(Error::shape(
                "cross_merge",
                format!("sequence {:?} does not cover a {h}x{w} grid", seq.shape()),
            ));
        }
        let grid = seq.index_select(0, &inverse(order))?;
        total = Some(match total {
            Some(acc) => acc.add(&grid)?,
            None => grid,
        });
    }
    let total = total.expect("four sequences");
    let c = total.shape()[1];
    total.reshape(&[h, w, c])
}

/// Input-dependent projections producing the per-token step size and the
/// state input/readout vectors.
pub struct SsmProjections<T: Real> {
    /// `C -> C` with bias, followed by softplus.
    pub delta: Linear<T>,
    /// `C -> N`, no bias.
    pub b: Linear<T>,
    /// `C -> N`, no bias.
    pub c: Linear<T>,
}

impl<T: Real> SsmProjections<T> {
    fn new(init: &mut Init, channels: usize, state: usize) -> Result<Self> {
        let mut delta = Linear::new(init, channels, channels, true)?;
        // step sizes start log-uniform in [1e-3, 1e-1]
        let bias: Vec<f64> = (0..channels)
            .map(|_| {
                let dt: f64 = (init.rng().random_range(1e-3f64.ln()..1e-1f64.ln())).exp();
                dt.exp_m1().ln()
            })
            .collect();
        delta.bias = Some(init.values(&[channels], &bias)?);
        Ok(SsmProjections {
            delta,
            b: Linear::new(init, channels, state, false)?,
            c: Linear::new(init, channels, state, false)?,
        })
    }
}

impl<T: Real> Module<T> for SsmProjections<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.delta.visit(&join(prefix, "delta"), f);
        self.b.visit(&join(prefix, "b"), f);
        self.c.visit(&join(prefix, "c"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.delta.visit_mut(&join(prefix, "delta"), f);
        self.b.visit_mut(&join(prefix, "b"), f);
        self.c.visit_mut(&join(prefix, "c"), f);
    }
}

pub struct SsmBranch<T: Real> {
    /// `A = -exp(a_log)`, so the diagonal state matrix stays negative.
    pub a_log: Tensor<T>,
    /// `[C]` direct feedthrough.
    pub d_skip: Tensor<T>,
    /// One entry when directions share projections, four otherwise.
    pub projections: Vec<SsmProjections<T>>,
    /// Pointwise `C -> C` output mix without bias.
    pub out: Linear<T>,
}

impl<T: Real> SsmBranch<T> {
    pub fn new(init: &mut Init, channels: usize, state: usize, shared_directions: bool) -> Result<Self> {
        if state == 0 {
            return Err(Error::Config("SSM state dimension must be at least 1".into()));
        }
        // A[c, n] = -(n + 1)
        let a_log: Vec<f64> = (0..channels)
            .flat_map(|_| (1..=state).map(|n| (n as f64).ln()))
            .collect();
        let a_log = init.values(&[channels, state], &a_log)?;
        let d_skip = init.constant(&[channels], 1.0)?;
        let sets = if shared_directions { 1 } else { 4 };
        let projections = (0..sets)
            .map(|_| SsmProjections::new(init, channels, state))
            .collect::<Result<_>>()?;
        Ok(SsmBranch {
            a_log,
            d_skip,
            projections,
            out: Linear::new(init, channels, channels, false)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn state_matrix(&self) -> Result<Tensor<T>> {
        self.a_log.exp()?.neg()
    }

    /// Selective scan of one `[T, C]` sequence with projection set `dir`.
    pub fn scan(&self, u: &Tensor<T>, dir: usize) -> Result<Tensor<T>> {
        let p = &self.projections[dir % self.projections.len()];
        let delta = p.delta.forward(u)?.softplus()?;
        let b = p.b.forward(u)?;
        let c = p.c.forward(u)?;
        Tensor::selective_scan(u, &delta, &self.state_matrix()?, &b, &c, &self.d_skip)
    }

    pub fn forward(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let ch = self.channels();
        let (h, w) = expect_map("ssm_branch", v, ch)?;
        let seqs = cross_scan(v)?;
        let [s0, s1, s2, s3] = &seqs;
        let scanned = [self.scan(s0, 0)?, self.scan(s1, 1)?, self.scan(s2, 2)?, self.scan(s3, 3)?];
        let merged = cross_merge(&scanned, h, w)?;
        self.out.forward(&merged.reshape(&[h * w, ch])?)?.reshape(&[h, w, ch])
    }
}

impl<T: Real> Module<T> for SsmBranch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "a_log"), &self.a_log);
        f(&join(prefix, "d_skip"), &self.d_skip);
        for (i, p) in self.projections.iter().enumerate() {
            p.visit(&join(prefix, &format!("proj.{i}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "a_log"), &mut self.a_log);
        f(&join(prefix, "d_skip"), &mut self.d_skip);
        for (i, p) in self.projections.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &format!("proj.{i}")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
