//! Patch embedding, stacked Mix-SSM stages with patch merging, the
//! classification head and checkpoint persistence.

mod checkpoint;
mod config;
mod layers;
mod model;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use layers::{BlockSpec, MixBlock, PatchEmbed, PatchMerging};
pub use model::{argmax, MixSsmNet, Stage, Trace, PARAM_GROUPS};
