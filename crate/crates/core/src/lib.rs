//! Core building blocks for click-supervised lidar object detection.
//!
//! Everything here is pure computation on immutable inputs:
//!
//! - [`geometry`]: points, oriented cuboids, cylinders, BEV / 3D IoU.
//! - [`kitti`]: velodyne scans, labels, calibration and the click file format.
//! - [`weak`]: pseudo foreground fields and bin/residual center encoding.
//! - [`synth`]: deterministic synthetic scenes with exact groundtruth.
//! - [`eval`]: detection matching and interpolated average precision.
//! - [`par`]: data-parallel helpers with a sequential fallback.
//!
//! Coordinates follow the rectified-camera convention: x right, y down
//! (the vertical axis), z forward. The bird's-eye view is the (x, z)-plane.

pub mod eval;
pub mod geometry;
pub mod kitti;
pub mod par;
pub mod synth;
pub mod weak;

pub use geometry::{Cuboid, CylinderProposal, Point, PointCloud};
pub use kitti::ClickAnnotation;
pub use par::Execution;
