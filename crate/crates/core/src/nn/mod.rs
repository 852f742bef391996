//! A minimal differentiable-operator substrate.
//!
//! Only the operators the downscaling network needs are implemented: 3x3
//! convolution, affine layers, ReLU, pixel shuffle, channel slicing, the
//! feature-unfolding gather and ensemble blend used by the coordinate MLP,
//! and a few reductions. A [`Graph`] records the forward pass and
//! [`Graph::backward`] accumulates parameter gradients into a [`ParamStore`].

mod adam;
mod graph;
mod ops;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, OptimState};
pub use graph::{Graph, Var};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Reference kernels used by tests as brute-force oracles and by the
/// pixel-shuffle inverse.
pub use ops::{conv2d_forward, linear_forward, pixel_shuffle_forward, pixel_unshuffle};
