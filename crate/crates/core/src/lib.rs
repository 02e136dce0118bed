//! Mix-SSM image classification: a small reverse-mode autograd engine, four
//! parallel visual encoders (selective-scan SSM, convolution, multi-head
//! self-attention, channel MLP), a softmax-gated selective fusion module, a
//! hierarchical patch-merging network and a training/evaluation harness.

pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod network;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use tensor::{Real, Tensor};
