//! Domain-shift-aware tri-planar cardiac MR segmentation.
//!
//! Test slices are pushed toward the appearance of a library of training
//! slices by gradient descent on content and Gram-matrix style losses, segmented
//! with an ASPP network trained on three orthogonal planes, rescored per voxel
//! and fused by an eight-way vote.

pub mod domain;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod postprocess;
pub mod rng;
pub mod segment;
pub mod style;
pub mod volume;

#[cfg(test)]
#[path = "../tests/support/oracles.rs"]
#[allow(dead_code)]
mod oracles;

pub use error::{Error, Result};
