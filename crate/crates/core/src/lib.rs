//! Incremental RGB-D mapping: TSDF voxel hashing with Dirichlet instance
//! fusion, an embedding codebook, and a voxel-seeded Gaussian splat field
//! optimized with a four-parameter blur/exposure camera model.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod embedding;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gaussians;
pub mod geometry;
pub mod ids;
pub mod mesh;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod splat;
pub mod voxel;

pub use error::{Error, Result};
