//! Semi-supervised keypoint supervision from multiview image streams.
//!
//! Unlabeled frames are supervised three ways: keypoint distributions of two
//! views are matched over their common epipolar planes, distributions of one
//! view are matched across time through dense optical flow, and visibility
//! maxima of nearby cameras are pulled together. A small predictor is
//! bootstrapped from sparse labels via RANSAC triangulation and ray-cast
//! visibility, then refined with all four losses.

pub mod bootstrap;
pub mod epipolar_transfer;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod heatmap;
pub mod model;
pub mod supervise;
pub mod synth;
pub mod temporal;
pub mod visibility;
