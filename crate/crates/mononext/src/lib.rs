//! Monocular 3D object detection on a bird's-eye-view grid.
//!
//! The crate covers the full pipeline: KITTI label/calibration ingestion,
//! encoding ground truth into an S×S BEV grid tensor, a ConvNext-style
//! multi-head network trained with a weighted multi-task loss, decoding
//! predictions back into scored 3D boxes, and KITTI-protocol evaluation
//! (per-difficulty AP, mean IoU, average recognition).
//!
//! All numeric kernels are generic over [`Real`] so the same code runs in
//! `f32` for training speed and `f64` where oracle-grade precision matters.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod kitti;
pub mod loss;
pub mod network;
pub mod nn;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{real, Real};

/// Concrete aliases for the two scalar lanes in common use.
pub type BoxSpec32 = geometry::BoxSpec<f32>;
pub type BoxSpec64 = geometry::BoxSpec<f64>;
pub type GridSpec32 = grid::GridSpec<f32>;
pub type GridSpec64 = grid::GridSpec<f64>;
pub type GridTensor32 = grid::GridTensor<f32>;
pub type GridTensor64 = grid::GridTensor<f64>;
