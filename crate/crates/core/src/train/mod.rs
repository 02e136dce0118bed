//! Data ingestion, loss, optimizer, training loop and metrics.

pub mod data;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod ppm;
pub mod synth;
pub mod trainer;

pub use data::{load_image_folder, Dataset, Sample};
pub use loss::cross_entropy;
pub use metrics::Metrics;
pub use optim::{Adam, DEFAULT_LR};
pub use synth::generate_synthetic;
pub use trainer::{evaluate, predict_all, train, EpochLog, Parallelism, TrainConfig};
