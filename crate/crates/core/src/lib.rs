//! Audio-based distributional semantic model (ADSM) pipeline.
//!
//! Clips are quantized against a k-means vocabulary of "audio-words" and
//! represented as mixtures of those words. Tags get embeddings in the same
//! space by averaging the clips that carry them (then PPMI weighting), which
//! makes cosine auto-tagging and semantic clip embeddings possible. The
//! [`eval`] module measures how well each representation satisfies human
//! triplet similarity judgments under cross-validation.
//!
//! Module map:
//!
//! - [`corpus`]: annotations, triplet constraints, folds, feature files
//! - [`features`]: WAV decoding, resampling, framing, MFCC+Δ+ΔΔ, Z-normalization
//! - [`vocab`]: k-means audio-word vocabulary and its on-disk format
//! - [`embed`]: window/clip encodings, tag matrix, PPMI, fusion, SVD
//! - [`tagger`]: cosine similarity and top-N auto-tagging
//! - [`eval`]: per-fold pipeline, accuracy, repeated CV, sweeps
//! - [`demo`]: synthetic corpus used by tests and the `--demo` CLI path

pub mod corpus;
pub mod demo;
pub mod embed;
mod error;
pub mod eval;
pub mod features;
pub mod tagger;
pub mod vocab;

pub use error::{Error, Result};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
