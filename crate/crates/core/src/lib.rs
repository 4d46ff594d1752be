//! Pairwise matching networks for open-world text classification.
//!
//! A matching function `f(a, b)` is trained on instance pairs to output the
//! probability that `a` and `b` share a class. At test time an instance is
//! scored against `K` remembered instances of every seen class, the scores
//! are aggregated with a trimmed mean, and a Gaussian-fitted threshold
//! decides between the best seen class and rejection as unseen.
//!
//! Modules, bottom up:
//!
//! - [`numerics`]: tensors, tape autodiff, optimizers, gradient checking.
//! - [`text_data`]: tokenization, vocabularies, embeddings, datasets.
//! - [`matcher`]: the CNN encoder, the two matching heads, training, model files.
//! - [`openworld`]: pairs, memories, class scoring, thresholds, decisions.
//! - [`harness`]: splits, metrics, end-to-end runs and reports.

pub mod error;
pub mod harness;
pub mod matcher;
pub mod numerics;
pub mod openworld;
pub mod rng;
pub mod text_data;

pub use error::{Error, Result};
