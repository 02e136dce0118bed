//! Ablation and analysis sweeps: one train + evaluate per setting, all
//! settings sharing the base configuration and seed.

use mixssm_core::encoders::BranchKind;
use mixssm_core::fusion::{Aggregation, Pooling};
use mixssm_core::network::{MixSsmNet, ModelConfig};
use mixssm_core::nn::Module;
use mixssm_core::train::{evaluate, train, Dataset, Parallelism, TrainConfig};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct Setting {
    pub name: String,
    pub model: ModelConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub name: String,
    pub accuracy: f64,
    pub f1: f64,
    pub params: usize,
}

/// The eight branch subsets: full, single and double removals of
/// CNN/MSA/MLP, and SSM only.
pub fn ablation_settings(base: &ModelConfig) -> Vec<Setting> {
    use BranchKind::{Conv, Mlp, Msa};
    let removals: [(&str, &[BranchKind]); 8] = [
        ("full", &[]),
        ("-cnn", &[Conv]),
        ("-msa", &[Msa]),
        ("-mlp", &[Mlp]),
        ("-cnn-msa", &[Conv, Msa]),
        ("-cnn-mlp", &[Conv, Mlp]),
        ("-msa-mlp", &[Msa, Mlp]),
        ("ssm-only", &[Conv, Msa, Mlp]),
    ];
    removals
        .into_iter()
        .map(|(name, drop)| Setting {
            name: name.to_string(),
            model: ModelConfig {
                branches: BranchKind::ALL.into_iter().filter(|k| !drop.contains(k)).collect(),
                ..base.clone()
            },
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Sweep {
    Aggregation,
    Kernel,
    Pooling,
}

pub fn sweep_settings(base: &ModelConfig, sweep: Sweep) -> Vec<Setting> {
    let with = |name: String, f: &dyn Fn(&mut ModelConfig)| {
        let mut model = base.clone();
        f(&mut model);
        Setting { name, model }
    };
    match sweep {
        Sweep::Aggregation => Aggregation::ALL
            .into_iter()
            .map(|m| with(m.name().into(), &|c| c.selective.mode = m))
            .collect(),
        Sweep::Kernel => [1, 3, 5, 7]
            .into_iter()
            .map(|k| with(format!("k={k}"), &|c| c.selective.kernel = k))
            .collect(),
        Sweep::Pooling => Pooling::ALL
            .into_iter()
            .map(|p| with(p.name().into(), &|c| c.selective.pooling = p))
            .collect(),
    }
}

fn run_one(setting: &Setting, train_cfg: &TrainConfig, train_data: &Dataset, eval_data: &Dataset, par: Parallelism) -> CliResult<Row> {
    let mut model: MixSsmNet = MixSsmNet::new(&setting.model)?;
    let params = model.num_params();
    train(&mut model, train_data, train_cfg, par, |_| {})?;
    let m = evaluate(&model, eval_data, par)?;
    Ok(Row {
        name: setting.name.clone(),
        accuracy: m.accuracy,
        f1: m.f1,
        params,
    })
}

/// Runs every setting. With `parallel`, settings run concurrently on
/// `threads` workers and each one trains single-threaded, so rows are the
/// same as in a sequential run.
pub fn run_settings(
    settings: &[Setting],
    train_cfg: &TrainConfig,
    train_data: &Dataset,
    eval_data: &Dataset,
    threads: usize,
    parallel: bool,
) -> CliResult<Vec<Row>> {
    if parallel {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        pool.install(|| {
            settings
                .par_iter()
                .map(|s| run_one(s, train_cfg, train_data, eval_data, Parallelism::SEQUENTIAL))
                .collect()
        })
    } else {
        settings
            .iter()
            .map(|s| run_one(s, train_cfg, train_data, eval_data, Parallelism(threads)))
            .collect()
    }
}

pub fn rows_to_csv(header_key: &str, rows: &[Row]) -> String {
    let mut s = format!("{header_key},acc,f1\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.name, r.accuracy, r.f1));
    }
    s
}
