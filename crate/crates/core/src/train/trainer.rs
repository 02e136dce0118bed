use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::loss::cross_entropy;
use super::metrics::Metrics;
use super::optim::{Adam, DEFAULT_LR};
use crate::network::{argmax, MixSsmNet};
use crate::nn::{Ctx, Module};
use crate::tensor::no_grad;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps, even mid-epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr: DEFAULT_LR,
            seed: 0,
            max_steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub train_acc: f64,
    pub steps: usize,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,mean_loss,train_acc";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.epoch, self.mean_loss, self.train_acc)
    }
}

/// Worker count for per-sample parallelism; 1 gives bitwise-reproducible runs.
#[derive(Clone, Copy, Debug)]
pub struct Parallelism(pub usize);

impl Parallelism {
    pub const SEQUENTIAL: Parallelism = Parallelism(1);

    fn run<R: Send>(self, f: impl FnOnce() -> R + Send) -> Result<R> {
        if self.0 <= 1 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.0)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

fn sample_seed(seed: u64, step: usize, index: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Forward + backward for one sample; returns (loss, correct).
fn sample_pass(model: &MixSsmNet<f32>, data: &Dataset, idx: usize, scale: f64, seed: u64) -> Result<(f64, bool)> {
    let s = &data.samples[idx];
    let ctx = Ctx::train(seed);
    let probs = model.forward(&s.image, &ctx)?;
    let correct = argmax(probs.data()) == s.label;
    let loss = cross_entropy(&probs, s.label)?;
    let value = f64::from(loss.item()?);
    loss.scale(scale)?.backward()?;
    Ok((value, correct))
}

fn check_compatible(model: &MixSsmNet<f32>, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Invalid("dataset is empty".into()));
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::Config(format!(
            "model predicts {} classes but the data has {}",
            model.num_classes(),
            data.num_classes()
        )));
    }
    let [h, w] = model.config.image_size;
    let expected = [h, w, model.config.in_channels];
    if let Some(s) = data.samples.iter().find(|s| s.image.shape() != expected) {
        return Err(Error::Config(format!(
            "image shape {:?} does not match model input {:?}",
            s.image.shape(),
            expected
        )));
    }
    Ok(())
}

/// Mini-batch Adam training. Each epoch reshuffles with a stream seeded
/// from `cfg.seed`; `on_epoch` sees every log entry as it is produced.
pub fn train(
    model: &mut MixSsmNet<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    par: Parallelism,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    check_compatible(model, data)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", cfg.lr)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            model.zero_grad();
            let scale = 1.0 / chunk.len() as f64;
            let abort = |loss: f64| Error::NumericalAbort { epoch, batch, loss };
            let results: Vec<Result<(f64, bool)>> = if par.0 <= 1 {
                chunk
                    .iter()
                    .enumerate()
                    .map(|(i, &idx)| sample_pass(model, data, idx, scale, sample_seed(cfg.seed, step, i)))
                    .collect()
            } else {
                let m: &MixSsmNet<f32> = model;
                par.run(|| {
                    chunk
                        .par_iter()
                        .enumerate()
                        .map(|(i, &idx)| sample_pass(m, data, idx, scale, sample_seed(cfg.seed, step, i)))
                        .collect()
                })?
            };
            let mut batch_loss = 0.0;
            for r in results {
                match r {
                    Ok((l, ok)) => {
                        batch_loss += l;
                        correct += usize::from(ok);
                    }
                    Err(e) if e.is_numerical() => return Err(abort(f64::NAN)),
                    Err(e) => return Err(e),
                }
            }
            if !batch_loss.is_finite() {
                return Err(abort(batch_loss));
            }
            loss_sum += batch_loss;
            seen += chunk.len();
            adam.step(model).map_err(|e| if e.is_numerical() { abort(batch_loss) } else { e })?;
            step += 1;
        }
        if seen == 0 {
            break;
        }
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            steps: step,
        };
        on_epoch(&log);
        logs.push(log);
    }
    model.zero_grad();
    Ok(logs)
}

/// Evaluation-mode predictions for every sample, in dataset order.
pub fn predict_all(model: &MixSsmNet<f32>, data: &Dataset, par: Parallelism) -> Result<Vec<usize>> {
    let one = |s: &super::data::Sample| -> Result<usize> {
        no_grad(|| model.forward(&s.image, &Ctx::eval())).map(|p| argmax(p.data()))
    };
    if par.0 <= 1 {
        data.samples.iter().map(one).collect()
    } else {
        par.run(|| data.samples.par_iter().map(one).collect())?
    }
}

pub fn evaluate(model: &MixSsmNet<f32>, data: &Dataset, par: Parallelism) -> Result<Metrics> {
    check_compatible(model, data)?;
    let predicted = predict_all(model, data, par)?;
    Metrics::from_predictions(&predicted, &data.labels(), model.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;
    use crate::train::data::Sample;
    use crate::Tensor;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: [8, 8],
            depths: vec![1],
            dims: vec![8],
            heads: vec![2],
            num_classes: 2,
            ..ModelConfig::default()
        }
    }

    fn toy_data() -> Dataset {
        let samples = (0..6)
            .map(|i| Sample {
                image: Tensor::full(&[8, 8, 3], if i % 2 == 0 { 0.8 } else { -0.8 }).unwrap(),
                label: i % 2,
            })
            .collect();
        Dataset {
            classes: vec!["a".into(), "b".into()],
            samples,
            paths: vec![],
        }
    }

    fn params(model: &MixSsmNet) -> Vec<Vec<u32>> {
        model
            .named_params()
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect()
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut model: MixSsmNet = MixSsmNet::new(&tiny()).unwrap();
        let before = params(&model);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let logs = train(&mut model, &toy_data(), &cfg, Parallelism::SEQUENTIAL, |_| {}).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[1].steps, 4);
        assert_eq!(params(&model), before);
    }

    #[test]
    fn runs_are_bitwise_repeatable() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model: MixSsmNet = MixSsmNet::new(&tiny()).unwrap();
            let logs = train(&mut model, &toy_data(), &cfg, Parallelism::SEQUENTIAL, |_| {}).unwrap();
            (params(&model), logs)
        };
        let (pa, la) = run();
        let (pb, lb) = run();
        assert_eq!(pa, pb);
        assert_eq!(la, lb);
    }

    #[test]
    fn max_steps_stops_early() {
        let mut model: MixSsmNet = MixSsmNet::new(&tiny()).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 4,
            max_steps: Some(3),
            ..TrainConfig::default()
        };
        let logs = train(&mut model, &toy_data(), &cfg, Parallelism::SEQUENTIAL, |_| {}).unwrap();
        assert_eq!(logs.last().unwrap().steps, 3);
    }

    #[test]
    fn class_count_mismatch_is_a_config_error() {
        let mut model: MixSsmNet = MixSsmNet::new(&ModelConfig { num_classes: 3, ..tiny() }).unwrap();
        let err = train(&mut model, &toy_data(), &TrainConfig::default(), Parallelism::SEQUENTIAL, |_| {});
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(evaluate(&model, &toy_data(), Parallelism::SEQUENTIAL).is_err());
    }

    #[test]
    fn parallel_evaluation_matches_sequential() {
        let model: MixSsmNet = MixSsmNet::new(&tiny()).unwrap();
        let a = evaluate(&model, &toy_data(), Parallelism::SEQUENTIAL).unwrap();
        let b = evaluate(&model, &toy_data(), Parallelism(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total(), 6);
    }
}
