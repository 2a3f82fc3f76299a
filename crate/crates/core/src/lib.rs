//! Voxelized Gaussian-to-Gaussian registration for LiDAR odometry.
//!
//! Scans are reduced to one normal distribution per voxel ([`voxel`]), matched
//! against a world voxel map by exact nearest-neighbour search
//! ([`odometry`]), and aligned with Newton's method on SE(3)
//! ([`optimizer`]) under one of several per-correspondence costs
//! ([`metrics`]). [`io`] and [`eval`] cover KITTI-format data and the
//! KITTI / ATE trajectory metrics.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod kdtree;
pub mod metrics;
pub mod odometry;
pub mod optimizer;
pub mod se3;
pub mod synthetic;
pub mod trajectory;
pub mod voxel;

pub use error::{Error, Result};
pub use metrics::{CostKind, CostParams, Correspondence};
pub use odometry::{run_odometry, PipelineConfig, VoxelMap};
pub use optimizer::{newton_solve, NewtonConfig, Objective};
pub use se3::{Mat3, Pose, Twist, Vec3};
pub use trajectory::Trajectory;
pub use voxel::{voxelize, GaussianVoxel, PointCloud, VoxelGrid};
