//! Finite-difference suite over every branch, the selective module and a
//! full block, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_inputs, check_module, GradCheckReport};
use crate::encoders::{BranchKind, ConvBranch, MlpBranch, MsaBranch, SsmBranch};
use crate::fusion::{Pooling, SelectiveConfig, SelectiveModule};
use crate::network::{BlockSpec, MixBlock};
use crate::nn::{Ctx, Init, Module};
use crate::tensor::{BackwardOp, Tensor};
use crate::Result;

pub const SUITE_STEP: f64 = 1e-4;
pub const SUITE_SEEDS: usize = 5;
pub const SUITE_SHAPE: [usize; 3] = [4, 4, 8];
pub const COMPONENTS: [&str; 6] = ["ssm", "conv", "mlp", "msa", "selective", "block"];

#[derive(Clone, Debug)]
pub struct ComponentResult {
    pub name: &'static str,
    pub seeds: usize,
    pub report: GradCheckReport,
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub seeds: usize,
    pub tolerance: f64,
    pub step: f64,
    /// Routes every objective through an identity op whose backward doubles
    /// the gradient; used to prove the suite can fail.
    pub inject_fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            seeds: SUITE_SEEDS,
            tolerance: 1e-3,
            step: SUITE_STEP,
            inject_fault: false,
        }
    }
}

struct DoubledGrad;

impl BackwardOp<f64> for DoubledGrad {
    fn name(&self) -> &'static str {
        "faulty_identity"
    }

    fn backward(&self, _inputs: &[Tensor<f64>], _output: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.iter().map(|g| 2.0 * g).collect())]
    }
}

fn faulty_identity(x: &Tensor<f64>) -> Result<Tensor<f64>> {
    Tensor::from_op("faulty_identity", x.shape().to_vec(), x.to_vec(), vec![x.clone()], DoubledGrad)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite")
}

/// Moves every parameter away from its (often tiny) initial value so all
/// gradient paths carry signal.
fn jitter(module: &mut impl Module<f64>, rng: &mut ChaCha8Rng) {
    module.visit_mut("", &mut |_, t| {
        let vals = t.data().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        *t = Tensor::param(t.shape(), vals).expect("finite");
    });
}

struct Probe {
    weights: Tensor<f64>,
    fault: bool,
}

impl Probe {
    fn new(shape: &[usize], rng: &mut ChaCha8Rng, fault: bool) -> Self {
        Probe {
            weights: random(shape, rng),
            fault,
        }
    }

    /// Scalar objective: a fixed random projection of the output.
    fn objective(&self, out: Tensor<f64>) -> Result<Tensor<f64>> {
        let out = if self.fault { faulty_identity(&out)? } else { out };
        out.mul(&self.weights)?.sum_all()
    }
}

fn check_map_module<M: Module<f64>>(
    module: &mut M,
    forward: impl Fn(&M, &Tensor<f64>) -> Result<Tensor<f64>>,
    rng: &mut ChaCha8Rng,
    opts: &SuiteOptions,
) -> Result<GradCheckReport> {
    jitter(module, rng);
    let input = random(&SUITE_SHAPE, rng);
    let probe = Probe::new(&SUITE_SHAPE, rng, opts.inject_fault);
    let mut report = check_module(
        module,
        |m| probe.objective(forward(m, &input)?),
        opts.step,
        opts.tolerance,
    )?;
    let m: &M = module;
    report.merge(check_inputs(
        |xs| probe.objective(forward(m, &xs[0])?),
        std::slice::from_ref(&input),
        opts.step,
        opts.tolerance,
    )?);
    Ok(report)
}

fn check_component(name: &str, seed: u64, opts: &SuiteOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init::new(seed);
    let c = SUITE_SHAPE[2];
    match name {
        "ssm" => {
            // odd seeds use separate per-direction projections
            let mut m = SsmBranch::new(&mut init, c, 4, seed.is_multiple_of(2))?;
            check_map_module(&mut m, |m, x| m.forward(x), &mut rng, opts)
        }
        "conv" => {
            let mut m = ConvBranch::new(&mut init, c, 3)?;
            check_map_module(&mut m, |m, x| m.forward(x), &mut rng, opts)
        }
        "mlp" => {
            let mut m = MlpBranch::new(&mut init, c, 2 * c)?;
            check_map_module(&mut m, |m, x| m.forward(x), &mut rng, opts)
        }
        "msa" => {
            let mut m = MsaBranch::new(&mut init, c, 2)?;
            check_map_module(&mut m, |m, x| m.forward(x), &mut rng, opts)
        }
        "selective" => {
            // cycles through the pooling methods; stochastic runs in expectation mode
            let cfg = SelectiveConfig {
                pooling: Pooling::ALL[(seed % 4) as usize],
                ..SelectiveConfig::default()
            };
            let mut m = SelectiveModule::new(&mut init, c, 4, &cfg)?;
            jitter(&mut m, &mut rng);
            let branches: Vec<Tensor<f64>> = (0..4).map(|_| random(&SUITE_SHAPE, &mut rng)).collect();
            let probe = Probe::new(&SUITE_SHAPE, &mut rng, opts.inject_fault);
            let ctx = Ctx::eval();
            let mut report = check_module(
                &mut m,
                |m| probe.objective(m.forward(&branches, &ctx)?),
                opts.step,
                opts.tolerance,
            )?;
            report.merge(check_inputs(
                |xs| probe.objective(m.forward(xs, &ctx)?),
                &branches,
                opts.step,
                opts.tolerance,
            )?);
            Ok(report)
        }
        "block" => {
            let spec = BlockSpec {
                channels: c,
                branches: BranchKind::ALL.to_vec(),
                heads: 2,
                ssm_state: 4,
                ssm_shared_directions: true,
                mlp_hidden: 2 * c,
                conv_kernel: 3,
                selective: SelectiveConfig::default(),
            };
            let mut m = MixBlock::new(&mut init, &spec)?;
            let ctx = Ctx::eval();
            check_map_module(&mut m, |m, x| m.forward(x, &ctx), &mut rng, opts)
        }
        other => Err(crate::Error::Invalid(format!("unknown gradient-check component {other:?}"))),
    }
}

/// Runs `opts.seeds` seeds of one component and merges the reports.
pub fn run_component(name: &'static str, opts: &SuiteOptions) -> Result<ComponentResult> {
    let mut merged: Option<GradCheckReport> = None;
    for i in 0..opts.seeds {
        let r = check_component(name, opts.seed.wrapping_add(i as u64), opts)?;
        match &mut merged {
            Some(m) => m.merge(r),
            None => merged = Some(r),
        }
    }
    let report = merged.ok_or_else(|| crate::Error::Invalid("at least one seed is required".into()))?;
    Ok(ComponentResult {
        name,
        seeds: opts.seeds,
        report,
    })
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<ComponentResult>> {
    COMPONENTS.into_iter().map(|c| run_component(c, opts)).collect()
}
