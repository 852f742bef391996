//! Arbitrary-scale downscaling of tidal-current fields.
//!
//! A low-resolution field (U and V velocity plus water level on a regular
//! grid) is encoded by a convolutional feature extractor with a learnable
//! positional encoding. A coordinate-conditioned MLP then decodes the value at
//! any continuous location, so the output grid can be any size. An auxiliary
//! conv + pixel-shuffle head supervises the extractor at the training scale,
//! and the feature map can be split between a velocity branch and a level
//! branch.
//!
//! Modules:
//! - [`field`]: gridded fields, coordinates, land masks, infill, normalization,
//!   and the `.tcds` file format.
//! - [`synth`]: deterministic synthetic tidal data.
//! - [`nn`]: the differentiable operator substrate and the Adam optimizer.
//! - [`model`]: the network.
//! - [`train`]: the training loop and `.tckp` checkpoints.
//! - [`eval`]: metrics, bicubic baseline, harnesses, PGM rendering.
//! - [`costmodel`]: analytic multiply-accumulate accounting.

pub mod costmodel;
pub mod error;
pub mod eval;
pub mod field;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
