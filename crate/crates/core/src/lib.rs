//! Bounding-box scenes: geometry, scene model, voxelization, cameras,
//! bounding-box image rendering, dataset conversion and a simulation of the
//! two-worker distillation loop.

pub mod bench;
pub mod camera;
pub mod dataset;
pub mod distill;
pub mod fixtures;
pub mod geometry;
pub mod par;
pub mod render;
pub mod scene;
pub mod voxel;
