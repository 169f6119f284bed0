//! CPU implementation of 3D Gaussian splatting with volume-driven densification.
//!
//! A scene is a population of anisotropic 3D Gaussians (position, rotation,
//! per-axis scale, opacity, spherical-harmonics color). Training renders the
//! population against posed photographs, backpropagates an L1 + D-SSIM loss
//! through the rasterizer, and periodically densifies and prunes the
//! population. On top of the usual gradient-driven clone/split control, any
//! Gaussian whose ellipsoid-of-inertia volume exceeds a threshold is split
//! into two children whose eigenvalues are shrunk by the covariance condition
//! number, which attacks oversized splats in under-reconstructed regions.
//!
//! Everything is f64 and fully deterministic: renders, gradients and
//! densification decisions are bit-reproducible for a fixed seed regardless
//! of thread count.

// Negated comparisons like `!(q <= q_max)` are used where a NaN must take
// the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod camera;
pub mod cloud;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod math;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
