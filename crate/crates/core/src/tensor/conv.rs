use super::{BackwardOp, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`.
    Same,
    /// No padding.
    Valid,
}

/// Geometry of a 2-D convolution over `[H, W, C]` feature maps with
/// `[kh, kw, C / groups, C_out]` kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: Padding::Same,
            groups: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
    /// input channels per group
    cig: usize,
    /// output channels per group
    cog: usize,
}

impl Geometry {
    fn new(x: &[usize], k: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let (&[h, w, cin], &[kh, kw, cig, cout]) = (x, k) else {
            return Err(Error::shape(
                "conv2d",
                format!("expected [H,W,C] input and [kh,kw,C/groups,Cout] kernel, got {x:?} and {k:?}"),
            ));
        };
        let g = spec.groups;
        if spec.stride == 0 || g == 0 || cin % g != 0 || cout % g != 0 || cin / g != cig {
            return Err(Error::shape(
                "conv2d",
                format!("input {x:?}, kernel {k:?}, stride {}, groups {g} are inconsistent", spec.stride),
            ));
        }
        let s = spec.stride;
        let (oh, ow, pad_top, pad_left) = match spec.padding {
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::shape(
                        "conv2d",
                        format!("kernel {kh}x{kw} larger than input {h}x{w} without padding"),
                    ));
                }
                ((h - kh) / s + 1, (w - kw) / s + 1, 0, 0)
            }
            Padding::Same => {
                let oh = h.div_ceil(s);
                let ow = w.div_ceil(s);
                let ph = ((oh - 1) * s + kh).saturating_sub(h);
                let pw = ((ow - 1) * s + kw).saturating_sub(w);
                (oh, ow, ph / 2, pw / 2)
            }
        };
        Ok(Geometry {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride: s,
            oh,
            ow,
            pad_top,
            pad_left,
            cig,
            cog: cout / g,
        })
    }

    /// Input coordinate for output position `o` and tap `k`, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < extent)
    }

    /// Calls `f(out_pixel, in_pixel, tap)` for every in-bounds (output, tap) pair.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for oy in 0..self.oh {
            for ky in 0..self.kh {
                let Some(iy) = Self::src(oy, ky, self.stride, self.pad_top, self.h) else {
                    continue;
                };
                for ox in 0..self.ow {
                    for kx in 0..self.kw {
                        let Some(ix) = Self::src(ox, kx, self.stride, self.pad_left, self.w) else {
                            continue;
                        };
                        f(oy * self.ow + ox, iy * self.w + ix, ky * self.kw + kx);
                    }
                }
            }
        }
    }
}

struct Conv2dBackward {
    geo: Geometry,
}

impl<T: Real> BackwardOp<T> for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = self.geo;
        let (x, k) = (inputs[0].data(), inputs[1].data());
        let mut dx = inputs[0].requires_grad().then(|| vec![T::zero(); x.len()]);
        let mut dk = inputs[1].requires_grad().then(|| vec![T::zero(); k.len()]);
        g.for_each_tap(|op, ip, tap| {
            let gout = &grad[op * g.cout..(op + 1) * g.cout];
            let xin = &x[ip * g.cin..(ip + 1) * g.cin];
            let kt = tap * g.cig * g.cout;
            for co in 0..g.cout {
                let gv = gout[co];
                if gv == T::zero() {
                    continue;
                }
                let base_ci = (co / g.cog) * g.cig;
                for ci in 0..g.cig {
                    let widx = kt + ci * g.cout + co;
                    if let Some(dx) = dx.as_mut() {
                        dx[ip * g.cin + base_ci + ci] += gv * k[widx];
                    }
                    if let Some(dk) = dk.as_mut() {
                        dk[widx] += gv * xin[base_ci + ci];
                    }
                }
            }
        });
        vec![dx, dk]
    }
}

impl<T: Real> Tensor<T> {
    /// Cross-correlation of an `[H, W, C]` map with a `[kh, kw, C/groups, C_out]`
    /// kernel. Bias is added separately.
    pub fn conv2d(&self, kernel: &Tensor<T>, spec: Conv2dSpec) -> Result<Tensor<T>> {
        let g = Geometry::new(self.shape(), kernel.shape(), spec)?;
        let (x, k) = (self.data(), kernel.data());
        let mut out = vec![T::zero(); g.oh * g.ow * g.cout];
        let dense = g.cog == g.cout;
        g.for_each_tap(|op, ip, tap| {
            let o = &mut out[op * g.cout..(op + 1) * g.cout];
            let xin = &x[ip * g.cin..(ip + 1) * g.cin];
            let kt = &k[tap * g.cig * g.cout..(tap + 1) * g.cig * g.cout];
            if dense {
                for (ci, &xv) in xin.iter().enumerate() {
                    if xv == T::zero() {
                        continue;
                    }
                    for (ov, &kv) in o.iter_mut().zip(&kt[ci * g.cout..(ci + 1) * g.cout]) {
                        *ov += xv * kv;
                    }
                }
            } else {
                for (co, ov) in o.iter_mut().enumerate() {
                    let base_ci = (co / g.cog) * g.cig;
                    for ci in 0..g.cig {
                        *ov += xin[base_ci + ci] * kt[ci * g.cout + co];
                    }
                }
            }
        });
        Tensor::from_op(
            "conv2d",
            vec![g.oh, g.ow, g.cout],
            out,
            vec![self.clone(), kernel.clone()],
            Conv2dBackward { geo: g },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_keeps_spatial_extent() {
        let x = Tensor::<f64>::zeros(&[5, 7, 2]);
        let k = Tensor::<f64>::zeros(&[3, 3, 2, 4]);
        let y = x.conv2d(&k, Conv2dSpec::default()).unwrap();
        assert_eq!(y.shape(), &[5, 7, 4]);
    }

    #[test]
    fn stride_four_valid_patchifies() {
        let x = Tensor::<f64>::zeros(&[32, 32, 3]);
        let k = Tensor::<f64>::zeros(&[4, 4, 3, 16]);
        let spec = Conv2dSpec {
            stride: 4,
            padding: Padding::Valid,
            groups: 1,
        };
        assert_eq!(x.conv2d(&k, spec).unwrap().shape(), &[8, 8, 16]);
    }

    #[test]
    fn depthwise_scales_each_channel_independently() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let k = Tensor::<f64>::from_f64(&[1, 1, 1, 3], &[10.0, 20.0, 30.0]).unwrap();
        let spec = Conv2dSpec {
            groups: 3,
            ..Conv2dSpec::default()
        };
        assert_eq!(x.conv2d(&k, spec).unwrap().data(), &[10.0, 40.0, 90.0]);
    }

    #[test]
    fn mismatched_channels_rejected() {
        let x = Tensor::<f64>::zeros(&[3, 3, 2]);
        let k = Tensor::<f64>::zeros(&[3, 3, 3, 2]);
        assert!(x.conv2d(&k, Conv2dSpec::default()).is_err());
    }
}
