//! Face-forensics localization and classification at desk scale.
//!
//! The crate bundles everything needed to study joint detection and
//! localization of manipulated face images without external data or
//! frameworks:
//!
//! - [`tensor`] — a dense tensor engine with reverse-mode differentiation
//!   and an ADAM optimizer, generic over the scalar type.
//! - [`geometry`] — 68-point landmark sets, similarity alignment to a
//!   canonical face, warping and landmark binary maps.
//! - [`synth`] — a procedural 10-class dataset of real, generated and
//!   partially edited faces with pixel-exact ground-truth masks.
//! - [`model`] — the two-branch network (class + mask) with three
//!   mask-head variants and the combined loss.
//! - [`train`] / [`eval`] — the training loop, metric families, ablation
//!   runner and heat-map emission.
//!
//! All randomness flows from a single root seed through ChaCha8 streams,
//! so every artifact is bit-reproducible.

pub mod eval;
pub mod geometry;
pub mod model;
pub mod num;
pub mod pipeline;
pub mod pnm;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use num::Scalar;
pub use tensor::{Graph, Tensor, TensorError};

/// Training-precision tensor (storage type for datasets and checkpoints).
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor (gradient checks, metric accumulation).
pub type Tensor64 = Tensor<f64>;
/// Training-precision graph.
pub type Graph32 = Graph<f32>;
/// Verification-precision graph.
pub type Graph64 = Graph<f64>;

/// Number of facial landmarks used throughout the pipeline.
pub const LANDMARK_COUNT: usize = 68;
