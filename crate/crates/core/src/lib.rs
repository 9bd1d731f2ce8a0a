//! Memory-bank-augmented diffusion policy at desk scale.
//!
//! The crate wires together a minimal autodiff tensor core, a two-stream
//! observation encoder, a bounded perceptual/cognitive memory bank with
//! attention retrieval, gated fusion and similarity-merge consolidation,
//! a memory-conditioned diffusion action expert, symbolic non-Markovian
//! manipulation environments with scripted experts, and a training /
//! evaluation / ablation harness.

pub mod error;
pub mod tensor;
pub mod tape;
pub mod params;
pub mod optim;
pub(crate) mod attn;
pub mod encoder;
pub mod memory;
pub mod expert;
pub mod env;
pub mod episode;
pub mod config;
pub mod data;
pub mod train;
pub mod eval;
pub mod ablate;
pub mod plot;

pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
