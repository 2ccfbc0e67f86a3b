//! Projection-based 3D shape search.
//!
//! A shape is normalized for translation and scale, rendered into depth
//! images from cameras spread over the unit sphere, and described by one
//! unit-norm vector per view and per descriptor channel. Retrieval runs in
//! two stages:
//!
//! 1. [`matching::FirstInvertedFile`] approximates the robust (mean-max)
//!    Hausdorff similarity between view sets by only comparing views that
//!    quantize to the same codeword.
//! 2. [`rerank::SecondInvertedFile`] re-ranks using a fuzzy Jaccard
//!    similarity between sparse neighborhood activations, aggregated over
//!    channels by a generalized mean.
//!
//! [`engine`] glues the stages into an index that can be built, persisted,
//! queried, evaluated and served over HTTP.
//!
//! Data-parallel loops use rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise. Results are
//! identical either way.

pub mod codebook;
pub mod engine;
pub mod error;
pub mod eval;
pub mod features;
pub mod matching;
pub mod mesh;
pub mod par;
pub mod render;
pub mod rerank;

pub use error::{Error, Result};
