//! Algorithmic core for multi-view temporal-stereo depth estimation feeding a
//! bird's-eye-view perception stack: homography warping, per-pixel depth
//! candidate refinement, pseudo-LiDAR frame fusion, fused voxel pooling,
//! size-aware circle NMS, depth metrics, and a deterministic synthetic scene
//! generator that stands in for drive data at desk scale.

// Validation deliberately writes `!(x > 0.0)` so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use nalgebra;

pub mod bev_pool;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod nms;
pub mod stereo;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, CameraModel, PixelDepthHypothesis, RigidTransform};
pub use grid::{FeatureMap, Grid2, Grid3};
pub use nms::RotatedBox;
pub use stereo::{CandidateSet, DepthDistribution, DepthState, OffsetField, StereoConfig};
