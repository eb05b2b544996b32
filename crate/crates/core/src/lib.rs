//! Occlusion-aware 2D→3D human pose lifting.
//!
//! The crate covers the whole pipeline: projecting motion-capture joints
//! into a pinhole camera, labeling occluded joints with two geometric
//! heuristics, rendering keypoint heatmaps, and training a temporal
//! convolutional network that gates occluded keypoints before lifting them
//! to 3D.

pub mod cli;
pub mod data;
pub mod geometry;
pub mod heatmap;
pub mod metrics;
pub mod nn;
pub mod occlusion;
pub mod train_eval;
