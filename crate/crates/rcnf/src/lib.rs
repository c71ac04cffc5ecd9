//! Random CapsNet Forest: an ensemble of capsule-network classifiers over
//! grayscale images derived from binary files.
//!
//! The crate covers the whole pipeline: converting raw bytes to images,
//! stratified splitting, bootstrap sampling, a small reverse-mode autograd
//! engine, the capsule network itself, Adam, bagged training with best-epoch
//! checkpointing, average-ensemble prediction, and evaluation metrics.

pub mod capsnet;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
