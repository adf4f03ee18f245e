//! Deep distillation hashing for palmprint identification and
//! verification.
//!
//! A heavy teacher network and a light student network map palm images
//! to 128-dimensional real features, trained with a contrastive hashing
//! loss plus a quantization penalty; the student additionally learns
//! from the frozen teacher through distance-based distillation losses.
//! Features binarize by sign into 128-bit codes matched by Hamming
//! distance against an enrolled gallery.
//!
//! Module map:
//! - [`tensor`]: dense `f64` arrays
//! - [`nn`]: networks, reverse-mode gradients, optimizers, checkpoints
//! - [`losses`]: the objective family (hashing, quantization, distillation)
//! - [`objective`]: losses packaged as training objectives
//! - [`hash`]: sign binarization, Hamming matching, gallery persistence
//! - [`eval`]: FAR/FRR/EER and identification accuracy
//! - [`roi`]: keypoint-driven region-of-interest extraction
//! - [`dataset`]: image ingestion, synthetic data, splits, pair batches
//! - [`pipeline`]: teacher/student training, enrollment, evaluation
//! - [`cli`]: the `ddh` command-line tool

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gray;
pub mod hash;
pub mod losses;
pub mod nn;
pub mod objective;
pub mod pipeline;
pub mod roi;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
