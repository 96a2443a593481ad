//! Relation-reasoned latent codes for generative-prior super-resolution.
//!
//! The crate is organised around a small deterministic tensor kernel with
//! trace-based reverse-mode differentiation, on top of which sit the two
//! reasoning modules (`gdm` disentangles an encoder latent into per-layer
//! codes, `cgm` turns those codes into per-layer detail codes), a frozen
//! seeded progressive generator standing in for a pre-trained prior, the
//! training objective, and the evaluation metrics (PSNR, DCI, latent
//! correlation).
//!
//! Everything here is `no_std` + `alloc`: all file formats, the CLI and the
//! training driver live in the companion `relsr` crate. Transcendentals go
//! through `libm` so results are bit-identical across platforms.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cgm;
pub mod error;
pub mod gdm;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod objective;
#[cfg(any(feature = "oracles", test))]
pub mod oracles;
pub mod prior;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use error::Error;
pub use graph::{Graph, NodeId};
pub use rng::Pcg32;
pub use tensor::Tensor;
