//! Input-dependent diagonal linear recurrence (selective scan).
//!
//! For every channel `c` and state lane `n`:
//!
//! ```text
//! a[t,c,n] = exp(delta[t,c] * A[c,n])
//! h[t,c,n] = a[t,c,n] * h[t-1,c,n] + delta[t,c] * B[t,n] * u[t,c]      (h[-1] = 0)
//! y[t,c]   = sum_n C[t,n] * h[t,c,n] + D[c] * u[t,c]
//! ```
//!
//! The forward pass runs the recurrence in fixed-size blocks: each block is
//! scanned from a zero state while tracking the running product of `a`, then
//! block-boundary states are propagated and folded back in.

use super::{BackwardOp, Real, Tensor};
use crate::error::{Error, Result};

/// Time steps per block.
pub const SCAN_BLOCK: usize = 16;

/// Blocked forward kernel over raw slices.
///
/// Layouts: `u, delta: [T, C]`, `a: [C, N]`, `b, c: [T, N]`, `d: [C]`.
/// Returns `(y [T, C], h [T, C, N])`.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan_blocked<T: Real>(
    u: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d: &[T],
    (steps, channels, state): (usize, usize, usize),
    block: usize,
) -> (Vec<T>, Vec<T>) {
    let plane = channels * state;
    let block = block.max(1);
    let mut h = vec![T::zero(); steps * plane];
    let mut prod = vec![T::zero(); steps * plane];

    // Local scans from a zero state, plus running decay products.
    for start in (0..steps).step_by(block) {
        let end = (start + block).min(steps);
        for t in start..end {
            for ch in 0..channels {
                let dt = delta[t * channels + ch];
                let drive = dt * u[t * channels + ch];
                for n in 0..state {
                    let decay = (dt * a[ch * state + n]).exp();
                    let i = t * plane + ch * state + n;
                    let inject = drive * b[t * state + n];
                    if t == start {
                        h[i] = inject;
                        prod[i] = decay;
                    } else {
                        h[i] = decay * h[i - plane] + inject;
                        prod[i] = decay * prod[i - plane];
                    }
                }
            }
        }
    }

    // Fold the final state of each block into the next, block by block.
    for start in (0..steps).step_by(block).skip(1) {
        let end = (start + block).min(steps);
        let (done, rest) = h.split_at_mut(start * plane);
        let carry = &done[(start - 1) * plane..];
        for t in start..end {
            let row = &mut rest[(t - start) * plane..(t - start + 1) * plane];
            let p = &prod[t * plane..(t + 1) * plane];
            for ((hv, &pv), &cv) in row.iter_mut().zip(p).zip(carry) {
                *hv += pv * cv;
            }
        }
    }

    let mut y = vec![T::zero(); steps * channels];
    for t in 0..steps {
        for ch in 0..channels {
            let mut acc = d[ch] * u[t * channels + ch];
            for n in 0..state {
                acc += c[t * state + n] * h[t * plane + ch * state + n];
            }
            y[t * channels + ch] = acc;
        }
    }
    (y, h)
}

struct ScanBackward<T> {
    states: Vec<T>,
    steps: usize,
    channels: usize,
    state: usize,
}

impl<T: Real> BackwardOp<T> for ScanBackward<T> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], dy: &[T]) -> Vec<Option<Vec<T>>> {
        let (steps, channels, state) = (self.steps, self.channels, self.state);
        let plane = channels * state;
        let [u, delta, a, b, c, d] = [0, 1, 2, 3, 4, 5].map(|i| inputs[i].data());
        let h = &self.states;

        let mut du = vec![T::zero(); u.len()];
        let mut ddelta = vec![T::zero(); delta.len()];
        let mut da = vec![T::zero(); a.len()];
        let mut db = vec![T::zero(); b.len()];
        let mut dc = vec![T::zero(); c.len()];
        let mut dd = vec![T::zero(); d.len()];
        // gradient reaching h[t] from h[t+1]
        let mut flow = vec![T::zero(); plane];

        for t in (0..steps).rev() {
            for ch in 0..channels {
                let tc = t * channels + ch;
                let (g, uv, dt) = (dy[tc], u[tc], delta[tc]);
                du[tc] += g * d[ch];
                dd[ch] += g * uv;
                for n in 0..state {
                    let k = ch * state + n;
                    let ht = h[t * plane + k];
                    dc[t * state + n] += g * ht;
                    let gh = g * c[t * state + n] + flow[k];
                    let decay = (dt * a[k]).exp();
                    let hprev = if t > 0 { h[(t - 1) * plane + k] } else { T::zero() };
                    let gdecay = gh * hprev * decay;
                    let bv = b[t * state + n];
                    ddelta[tc] += gdecay * a[k] + gh * bv * uv;
                    da[k] += gdecay * dt;
                    db[t * state + n] += gh * dt * uv;
                    du[tc] += gh * dt * bv;
                    flow[k] = gh * decay;
                }
            }
        }
        [du, ddelta, da, db, dc, dd]
            .into_iter()
            .zip(inputs)
            .map(|(g, t)| t.requires_grad().then_some(g))
            .collect()
    }
}

impl<T: Real> Tensor<T> {
    /// Selective scan over a `[T, C]` sequence.
    ///
    /// `delta` must already be positive (e.g. a softplus output); `a` is the
    /// `[C, N]` diagonal state matrix, `b`/`c` the per-step `[T, N]` input and
    /// readout vectors and `d` the `[C]` skip weights.
    pub fn selective_scan(
        u: &Tensor<T>,
        delta: &Tensor<T>,
        a: &Tensor<T>,
        b: &Tensor<T>,
        c: &Tensor<T>,
        d: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let &[steps, channels] = u.shape() else {
            return Err(Error::shape("selective_scan", format!("u must be [T, C], got {:?}", u.shape())));
        };
        let state = a.shape().get(1).copied().unwrap_or(0);
        if steps == 0 || state == 0 {
            return Err(Error::shape("selective_scan", "need at least one step and one state lane"));
        }
        let expected: [(&str, &Tensor<T>, Vec<usize>); 5] = [
            ("delta", delta, vec![steps, channels]),
            ("A", a, vec![channels, state]),
            ("B", b, vec![steps, state]),
            ("C", c, vec![steps, state]),
            ("D", d, vec![channels]),
        ];
        for (name, t, shape) in &expected {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "selective_scan",
                    format!("{name} must be {shape:?}, got {:?}", t.shape()),
                ));
            }
        }
        let (y, states) = selective_scan_blocked(
            u.data(),
            delta.data(),
            a.data(),
            b.data(),
            c.data(),
            d.data(),
            (steps, channels, state),
            SCAN_BLOCK,
        );
        Tensor::from_op(
            "selective_scan",
            vec![steps, channels],
            y,
            vec![u.clone(), delta.clone(), a.clone(), b.clone(), c.clone(), d.clone()],
            ScanBackward {
                states,
                steps,
                channels,
                state,
            },
        )
    }
}
