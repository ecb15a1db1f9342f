//! Desk-scale lidar-monocular visual odometry with genetic-algorithm
//! parameter tuning.
//!
//! The crate covers the whole loop: synthetic scene generation, lidar depth
//! fusion for tracked image features, robust frame-to-frame motion
//! estimation, keyframe bundle adjustment, trajectory error metrics, and a
//! binary-chromosome genetic algorithm that searches the five robustness
//! parameters (outlier rejection quantile, per-bin landmark caps, vegetation
//! weight) for minimal translation drift.
//!
//! See `examples/` for one runnable program per capability and the `galvo`
//! binary for the file-based workflow.

pub mod backend;
pub mod config;
pub mod depth;
pub mod evaluation;
pub mod ga;
pub mod geometry;
pub mod odometry;
pub mod pipeline;
pub mod sim;

pub use geometry::{CameraIntrinsics, GeometryError, Point2, Point3, Pose};
