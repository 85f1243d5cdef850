//! Learnable frame selection for video captioning.
//!
//! A small temporal network scores every frame of a video from precomputed
//! frame embeddings. At inference the timeline is split into `K` equal
//! segments and the best-scoring frame of each is kept. Training runs the
//! softmax of the scores through a truncated, renormalized weighting into a
//! frozen differentiable captioner and minimizes the caption loss relative to
//! a uniform weighting of the same frames.

pub mod captioner;
mod digest;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod par;
pub mod selector;
pub mod synth;
pub mod trainer;
pub mod tsnet;

pub use digest::{sha256_bytes, sha256_f64_blocks};
pub use error::{LfsError, Result};
