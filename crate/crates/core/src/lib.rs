//! Voxel/image fusion for 4D radar point clouds.
//!
//! The crate covers the numeric core of a radar/camera fusion detector:
//! voxelization and centroid tracking, a hash-indexed sparse 3D backbone,
//! image-feature sampling into voxels (single-point and deformable
//! multi-sample variants), the foreground-scoring head, a pillar (BEV)
//! variant, the multi-scale BEV neck, and the evaluation side: rotated-box
//! IoU, interpolated AP, and feature-blurring diagnostics.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod neck;
pub mod nn;
pub mod pillar;
pub mod pipeline;
pub mod rng;
pub mod semantic;
pub mod sparse;
pub mod synth;
pub mod voxel;

pub mod par;

pub use error::{Error, Result};
