use crate::encoders::{BranchKind, ConvBranch, MlpBranch, MsaBranch, SsmBranch};
use crate::fusion::{SelectiveConfig, SelectiveModule};
use crate::nn::{join, Ctx, Init, LayerNorm, Linear, Module, INIT_STD};
use crate::tensor::{Conv2dSpec, Padding, Real, Tensor};
use crate::{Error, Result};

/// Non-overlapping `p x p` patches projected to `C` channels, then normalized.
pub struct PatchEmbed<T: Real> {
    pub patch: usize,
    /// `[p, p, in_channels, C]`.
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Real> PatchEmbed<T> {
    pub fn new(init: &mut Init, patch: usize, in_channels: usize, dim: usize) -> Result<Self> {
        Ok(PatchEmbed {
            patch,
            kernel: init.trunc_normal(&[patch, patch, in_channels, dim], INIT_STD)?,
            bias: init.constant(&[dim], 0.0)?,
            norm: LayerNorm::new(init, dim)?,
        })
    }

    /// Projection before normalization.
    pub fn project(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.patch;
        match *image.shape() {
            [h, w, _] if h % p == 0 && w % p == 0 => {}
            _ => {
                return Err(Error::shape(
                    "patch_embed",
                    format!("input {:?} is not divisible into {p}x{p} patches", image.shape()),
                ))
            }
        }
        let spec = Conv2dSpec {
            stride: p,
            padding: Padding::Valid,
            groups: 1,
        };
        image.conv2d(&self.kernel, spec)?.add(&self.bias)
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.norm.forward(&self.project(image)?)
    }
}

impl<T: Real> Module<T> for PatchEmbed<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Settings shared by every block of a stage.
#[derive(Clone, Debug)]
pub struct BlockSpec {
    pub channels: usize,
    pub branches: Vec<BranchKind>,
    pub heads: usize,
    pub ssm_state: usize,
    pub ssm_shared_directions: bool,
    pub mlp_hidden: usize,
    pub conv_kernel: usize,
    pub selective: SelectiveConfig,
}

/// Pre-norm residual block: `v + fuse(branches(norm(v)))`.
pub struct MixBlock<T: Real> {
    pub norm: LayerNorm<T>,
    pub ssm: Option<SsmBranch<T>>,
    pub conv: Option<ConvBranch<T>>,
    pub mlp: Option<MlpBranch<T>>,
    pub msa: Option<MsaBranch<T>>,
    pub fusion: SelectiveModule<T>,
}

impl<T: Real> MixBlock<T> {
    pub fn new(init: &mut Init, spec: &BlockSpec) -> Result<Self> {
        let c = spec.channels;
        let on = |k| spec.branches.contains(&k);
        let norm = LayerNorm::new(init, c)?;
        let ssm = on(BranchKind::Ssm)
            .then(|| SsmBranch::new(init, c, spec.ssm_state, spec.ssm_shared_directions))
            .transpose()?;
        let conv = on(BranchKind::Conv)
            .then(|| ConvBranch::new(init, c, spec.conv_kernel))
            .transpose()?;
        let mlp = on(BranchKind::Mlp).then(|| MlpBranch::new(init, c, spec.mlp_hidden)).transpose()?;
        let msa = on(BranchKind::Msa).then(|| MsaBranch::new(init, c, spec.heads)).transpose()?;
        let n = [ssm.is_some(), conv.is_some(), mlp.is_some(), msa.is_some()]
            .into_iter()
            .filter(|&b| b)
            .count();
        if n == 0 {
            return Err(Error::Config("a block needs at least one branch".into()));
        }
        let fusion = SelectiveModule::new(init, c, n, &spec.selective)?;
        Ok(MixBlock {
            norm,
            ssm,
            conv,
            mlp,
            msa,
            fusion,
        })
    }

    /// Enabled branch outputs on `u`, in canonical branch order.
    pub fn branch_outputs(&self, u: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::with_capacity(4);
        if let Some(b) = &self.ssm {
            out.push(b.forward(u)?);
        }
        if let Some(b) = &self.conv {
            out.push(b.forward(u)?);
        }
        if let Some(b) = &self.mlp {
            out.push(b.forward(u)?);
        }
        if let Some(b) = &self.msa {
            out.push(b.forward(u)?);
        }
        Ok(out)
    }

    /// Branches followed by fusion, without the norm and the residual.
    pub fn encode_and_fuse(&self, u: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        self.fusion.forward(&self.branch_outputs(u)?, ctx)
    }

    pub fn forward(&self, v: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        let u = self.norm.forward(v)?;
        v.add(&self.encode_and_fuse(&u, ctx)?)
    }
}

impl<T: Real> Module<T> for MixBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.norm.visit(&join(prefix, "norm"), f);
        if let Some(b) = &self.ssm {
            b.visit(&join(prefix, "ssm"), f);
        }
        if let Some(b) = &self.conv {
            b.visit(&join(prefix, "conv"), f);
        }
        if let Some(b) = &self.mlp {
            b.visit(&join(prefix, "mlp"), f);
        }
        if let Some(b) = &self.msa {
            b.visit(&join(prefix, "msa"), f);
        }
        self.fusion.visit(&join(prefix, "fusion"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        if let Some(b) = &mut self.ssm {
            b.visit_mut(&join(prefix, "ssm"), f);
        }
        if let Some(b) = &mut self.conv {
            b.visit_mut(&join(prefix, "conv"), f);
        }
        if let Some(b) = &mut self.mlp {
            b.visit_mut(&join(prefix, "mlp"), f);
        }
        if let Some(b) = &mut self.msa {
            b.visit_mut(&join(prefix, "msa"), f);
        }
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
    }
}

/// 2x2 neighbourhoods concatenated to `4C`, normalized and projected to `2C`.
pub struct PatchMerging<T: Real> {
    pub norm: LayerNorm<T>,
    pub reduction: Linear<T>,
}

impl<T: Real> PatchMerging<T> {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        Ok(PatchMerging {
            norm: LayerNorm::new(init, 4 * channels)?,
            reduction: Linear::new(init, 4 * channels, 2 * channels, false)?,
        })
    }

    /// `[H, W, C] -> [H/2, W/2, 4C]`; the four neighbours are ordered
    /// (0,0), (1,0), (0,1), (1,1) by (row, column) offset.
    pub fn gather(v: &Tensor<T>) -> Result<Tensor<T>> {
        let &[h, w, c] = v.shape() else {
            return Err(Error::shape("patch_merging", format!("expected [H, W, C], got {:?}", v.shape())));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("patch_merging", format!("spatial dims {h}x{w} must be even")));
        }
        v.reshape(&[h / 2, 2, w / 2, 2, c])?
            .permute(&[0, 2, 3, 1, 4])?
            .reshape(&[h / 2, w / 2, 4 * c])
    }

    pub fn forward(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Self::gather(v)?;
        let (h2, w2, c4) = (g.shape()[0], g.shape()[1], g.shape()[2]);
        let y = self.norm.forward(&g.reshape(&[h2 * w2, c4])?)?;
        self.reduction.forward(&y)?.reshape(&[h2, w2, c4 / 2])
    }
}

impl<T: Real> Module<T> for PatchMerging<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.norm.visit(&join(prefix, "norm"), f);
        self.reduction.visit(&join(prefix, "reduction"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.reduction.visit_mut(&join(prefix, "reduction"), f);
    }
}
