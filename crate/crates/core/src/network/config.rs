use serde::{Deserialize, Serialize};

use crate::encoders::BranchKind;
use crate::fusion::SelectiveConfig;
use crate::{Error, Result};

/// Architecture hyperparameters. Every field has a default, so partial
/// documents deserialize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input `[height, width]`.
    pub image_size: [usize; 2],
    pub in_channels: usize,
    pub patch_size: usize,
    /// Blocks per stage.
    pub depths: Vec<usize>,
    /// Channels per stage; each stage doubles the previous one.
    pub dims: Vec<usize>,
    /// Attention heads per stage.
    pub heads: Vec<usize>,
    pub branches: Vec<BranchKind>,
    pub ssm_state: usize,
    /// Share the SSM projections across the four scan directions.
    pub ssm_shared_directions: bool,
    /// Hidden width of the MLP branch as a multiple of the channel count.
    pub mlp_ratio: usize,
    pub conv_kernel: usize,
    pub selective: SelectiveConfig,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: [224, 224],
            in_channels: 3,
            patch_size: 4,
            depths: vec![2, 2, 4, 2],
            dims: vec![32, 64, 128, 256],
            heads: vec![1, 2, 4, 8],
            branches: BranchKind::ALL.to_vec(),
            ssm_state: 8,
            ssm_shared_directions: true,
            mlp_ratio: 2,
            conv_kernel: 3,
            selective: SelectiveConfig::default(),
            num_classes: 10,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Laptop-sized plan: 32x32 input, depths `[1, 1, 2, 1]`, dims `[16, 32, 64, 128]`.
    pub fn desk() -> Self {
        ModelConfig {
            image_size: [32, 32],
            depths: vec![1, 1, 2, 1],
            dims: vec![16, 32, 64, 128],
            num_classes: 4,
            ..ModelConfig::default()
        }
    }

    pub fn num_stages(&self) -> usize {
        self.depths.len()
    }

    /// Enabled branches in canonical order, which is also the order of the
    /// fusion strategies.
    pub fn enabled_branches(&self) -> Vec<BranchKind> {
        BranchKind::ALL.into_iter().filter(|k| self.branches.contains(k)).collect()
    }

    pub fn has_branch(&self, kind: BranchKind) -> bool {
        self.branches.contains(&kind)
    }

    /// Spatial size `[h, w]` of the feature map entering `stage`.
    pub fn stage_resolution(&self, stage: usize) -> [usize; 2] {
        let [h, w] = self.image_size;
        let p = self.patch_size.max(1);
        [(h / p) >> stage, (w / p) >> stage]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let stages = self.depths.len();
        if stages == 0 {
            return fail("at least one stage is required".into());
        }
        if self.dims.len() != stages || self.heads.len() != stages {
            return fail(format!(
                "depths, dims and heads must have equal length (got {}, {}, {})",
                stages,
                self.dims.len(),
                self.heads.len()
            ));
        }
        if self.depths.contains(&0) {
            return fail("every stage needs at least one block".into());
        }
        if self.in_channels == 0 || self.patch_size == 0 || self.num_classes == 0 {
            return fail("in_channels, patch_size and num_classes must be positive".into());
        }
        if self.dims[0] == 0 {
            return fail("stage channels must be positive".into());
        }
        for pair in self.dims.windows(2) {
            if pair[1] != 2 * pair[0] {
                return fail(format!("stage channels must double each stage, got {:?}", self.dims));
            }
        }
        let [h, w] = self.image_size;
        let factor = self.patch_size << (stages - 1);
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return fail(format!(
                "image size {h}x{w} must be divisible by patch size {} times 2^{}",
                self.patch_size,
                stages - 1
            ));
        }
        if self.branches.is_empty() {
            return fail("at least one branch must be enabled".into());
        }
        if self.enabled_branches().len() != self.branches.len() {
            return fail(format!("duplicate branch in {:?}", self.branches));
        }
        if self.has_branch(BranchKind::Ssm) && self.ssm_state == 0 {
            return fail("SSM state dimension must be at least 1".into());
        }
        if self.has_branch(BranchKind::Mlp) && self.mlp_ratio == 0 {
            return fail("mlp_ratio must be positive".into());
        }
        if self.has_branch(BranchKind::Conv) && self.conv_kernel.is_multiple_of(2) {
            return fail(format!("conv kernel must be odd, got {}", self.conv_kernel));
        }
        for (&c, &heads) in self.dims.iter().zip(&self.heads) {
            if self.has_branch(BranchKind::Msa) && (heads == 0 || c % heads != 0) {
                return fail(format!("{heads} heads do not divide {c} channels"));
            }
            self.selective.validate(c)?;
        }
        Ok(())
    }
}
