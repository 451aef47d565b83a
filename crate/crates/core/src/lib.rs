//! Geometry-aware Gaussian-process learning on manifold-valued data.
//!
//! The crate is organised bottom-up:
//!
//! - [`manifold_io`]: OFF/OBJ/PLY/XYZ loading, colored PLY export, dataset manifests.
//! - [`geometry`]: coordinate normalization, truncated geodesic graphs, discrete curvature.
//! - [`kernels`]: the damped-cosine GAC kernel family, baseline kernels, sparse
//!   kernel assembly, the weighted-square MMK construction and a quadrature oracle
//!   for the diffusion process the kernel is derived from.
//! - [`gpr`]: exact GP conditioning with O(n²) rank-one factor updates.
//! - [`saliency`]: greedy maximum-posterior-variance salient point selection.
//! - [`features`]: Laplace–Beltrami spectra, wave kernel signatures and
//!   fixed-length shape feature assembly.
//! - [`deep_gp`]: a stacked sparse variational GP classifier trained with a
//!   doubly stochastic ELBO and an in-crate reverse-mode gradient tape.
//! - [`evaluation`]: accumulated-curvature curves, their greedy upper bound and
//!   classification metrics.
//! - [`dataset`]: seeded train/val/test splitting of manifests.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod deep_gp;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod gpr;
pub mod kernels;
pub mod linalg;
pub mod manifold_io;
pub mod rng;
pub mod saliency;
pub mod shapes;

pub use error::{Error, Result};
pub use manifold_io::{Manifold, ShapeRecord};
