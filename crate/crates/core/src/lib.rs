//! Stable-rank experiments for a patch data model and a two-layer CNN.
//!
//! The library is organized around a pipeline:
//!
//! * [`data`] builds orthonormal basis systems and samples patched datasets
//!   (object patches drawn from a class basis, background patches which are
//!   Gaussian noise confined to the orthogonal complement).
//! * [`cnn`] evaluates the two-layer CNN with Huberized ReLU activation, its
//!   logistic training loss, and exact gradients.
//! * [`train`] runs full-batch gradient descent with metric logging and
//!   checkpointing.
//! * [`spectral`] computes singular values and the rank functionals (stable
//!   rank, threshold rank) used everywhere else.
//! * [`analysis`] post-processes trained filters: decomposition over signal
//!   and noise directions, permutation alignment, growth/rate fits.
//! * [`theory`] contains standalone numeric validators for the sequence and
//!   concentration lemmas the training analysis rests on.
//! * [`ingest`] is the real-data path: IDX parsing, PCA reduction, noise
//!   padding and patch formatting.

pub mod analysis;
pub mod cnn;
pub mod data;
pub mod error;
pub mod ingest;
pub mod spectral;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use spectral::SpectrumReport;

/// Default ratio for threshold rank: count singular values within 1/100 of
/// the largest.
pub const DEFAULT_THRESHOLD_RATIO: f64 = 0.01;
