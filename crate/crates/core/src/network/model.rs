use crate::encoders::BranchKind;
use crate::nn::{join, Ctx, Init, LayerNorm, Linear, Module};
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

use super::config::ModelConfig;
use super::layers::{BlockSpec, MixBlock, PatchEmbed, PatchMerging};

pub struct Stage<T: Real> {
    pub blocks: Vec<MixBlock<T>>,
    /// Absent after the last stage.
    pub merge: Option<PatchMerging<T>>,
}

/// Hierarchical Mix-SSM classifier.
pub struct MixSsmNet<T: Real = f32> {
    pub config: ModelConfig,
    pub embed: PatchEmbed<T>,
    pub stages: Vec<Stage<T>>,
    pub head_norm: LayerNorm<T>,
    pub head: Linear<T>,
}

/// Output of a traced forward pass.
pub struct Trace<T: Real> {
    /// Feature-map shape after the embedding and after every stage.
    pub shapes: Vec<Vec<usize>>,
    /// Pooled `[L]` descriptor fed to the classifier.
    pub pooled: Tensor<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

/// Parameter-count groups reported by [`MixSsmNet::param_groups`].
pub const PARAM_GROUPS: [&str; 9] = ["embed", "norm", "ssm", "conv", "mlp", "msa", "fusion", "merge", "head"];

impl<T: Real> MixSsmNet<T> {
    /// Builds a freshly initialized network from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(config.seed);
        let embed = PatchEmbed::new(&mut init, config.patch_size, config.in_channels, config.dims[0])?;
        let branches = config.enabled_branches();
        let mut stages = Vec::with_capacity(config.num_stages());
        for (s, (&depth, &dim)) in config.depths.iter().zip(&config.dims).enumerate() {
            let spec = BlockSpec {
                channels: dim,
                branches: branches.clone(),
                heads: config.heads[s],
                ssm_state: config.ssm_state,
                ssm_shared_directions: config.ssm_shared_directions,
                mlp_hidden: config.mlp_ratio * dim,
                conv_kernel: config.conv_kernel,
                selective: config.selective.clone(),
            };
            let blocks = (0..depth)
                .map(|_| MixBlock::new(&mut init, &spec))
                .collect::<Result<Vec<_>>>()?;
            let merge = if s + 1 < config.num_stages() {
                Some(PatchMerging::new(&mut init, dim)?)
            } else {
                None
            };
            stages.push(Stage { blocks, merge });
        }
        let last = *config.dims.last().expect("validated");
        Ok(MixSsmNet {
            config: config.clone(),
            embed,
            stages,
            head_norm: LayerNorm::new(&mut init, last)?,
            head: Linear::new(&mut init, last, config.num_classes, true)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        let [h, w] = self.config.image_size;
        let expected = [h, w, self.config.in_channels];
        if image.shape() != expected {
            return Err(Error::shape(
                "forward_classify",
                format!("expected image {:?}, got {:?}", expected, image.shape()),
            ));
        }
        Ok(())
    }

    pub fn trace(&self, image: &Tensor<T>, ctx: &Ctx) -> Result<Trace<T>> {
        self.check_input(image)?;
        let mut x = self.embed.forward(image)?;
        let mut shapes = vec![x.shape().to_vec()];
        for stage in &self.stages {
            for block in &stage.blocks {
                x = block.forward(&x, ctx)?;
            }
            if let Some(m) = &stage.merge {
                x = m.forward(&x)?;
                shapes.push(x.shape().to_vec());
            }
        }
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let pooled = self.head_norm.forward(&x.reshape(&[h * w, c])?)?.mean_axis(0)?;
        let logits = self.head.forward(&pooled.reshape(&[1, c])?)?.reshape(&[self.num_classes()])?;
        let probs = logits.softmax(0)?;
        Ok(Trace {
            shapes,
            pooled,
            logits,
            probs,
        })
    }

    /// Class distribution for one `[H, W, C_in]` image.
    pub fn forward(&self, image: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        Ok(self.trace(image, ctx)?.probs)
    }

    pub fn predict(&self, image: &Tensor<T>) -> Result<usize> {
        let probs = crate::tensor::no_grad(|| self.forward(image, &Ctx::eval()))?;
        Ok(argmax(probs.data()))
    }

    /// Parameter counts per group, in [`PARAM_GROUPS`] order. Groups of
    /// disabled branches report 0.
    pub fn param_groups(&self) -> Vec<(&'static str, usize)> {
        let mut counts = [0usize; PARAM_GROUPS.len()];
        self.visit("", &mut |name, t| {
            counts[group_of(name)] += t.numel();
        });
        PARAM_GROUPS.into_iter().zip(counts).collect()
    }

    /// Parameters owned by one branch kind across all blocks.
    pub fn branch_params(&self, kind: BranchKind) -> usize {
        self.param_groups()
            .into_iter()
            .find(|(g, _)| *g == kind.name())
            .map_or(0, |(_, n)| n)
    }
}

fn group_of(name: &str) -> usize {
    let parts: Vec<&str> = name.split('.').collect();
    let key = match parts.as_slice() {
        ["embed", ..] => "embed",
        ["stages", _, "merge", ..] => "merge",
        ["stages", _, "blocks", _, part, ..] => part,
        ["head", ..] => "head",
        _ => "norm",
    };
    PARAM_GROUPS.iter().position(|g| *g == key).unwrap_or(1)
}

pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> Module<T> for MixSsmNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.embed.visit(&join(prefix, "embed"), f);
        for (s, stage) in self.stages.iter().enumerate() {
            let sp = join(prefix, &format!("stages.{s}"));
            for (b, block) in stage.blocks.iter().enumerate() {
                block.visit(&join(&sp, &format!("blocks.{b}")), f);
            }
            if let Some(m) = &stage.merge {
                m.visit(&join(&sp, "merge"), f);
            }
        }
        self.head_norm.visit(&join(prefix, "head_norm"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            let sp = join(prefix, &format!("stages.{s}"));
            for (b, block) in stage.blocks.iter_mut().enumerate() {
                block.visit_mut(&join(&sp, &format!("blocks.{b}")), f);
            }
            if let Some(m) = &mut stage.merge {
                m.visit_mut(&join(&sp, "merge"), f);
            }
        }
        self.head_norm.visit_mut(&join(prefix, "head_norm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
