//! Scribe identification for segmented handwritten document lines.
//!
//! The pipeline turns RGB line images into masked grayscale images, cuts them
//! into fixed-size patches with a left-to-right sliding window, classifies the
//! patches with a small trainable convnet, averages the softmax outputs up to
//! line and page level, and applies a confidence threshold that can reject a
//! precarious decision instead of forcing a class. Evaluation keeps codices
//! disjoint between training and the cross-codex test set so that the reported
//! scores measure handwriting, not parchment.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod patching;
pub mod pipeline;
pub mod scoring;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
