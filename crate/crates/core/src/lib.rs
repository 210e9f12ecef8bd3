//! Real-time 3D tracking of articulated robot tools.
//!
//! The library fuses part-based 2D template detections with a kinematic pose
//! stream to estimate a hand-eye correction transform online:
//!
//! 1. [`render`] draws the tool silhouette from the robot kinematics and a
//!    parametric tool model, reporting projected keypoints and visibility.
//! 2. [`qgo`] extracts quantized-gradient-orientation part templates around
//!    the visible keypoints and matches them against the camera image.
//! 3. [`verify`] rejects outlier matches by checking 2D geometrical context
//!    with paired polar grids inside a progressive sample-consensus loop.
//! 4. [`pose`] maintains the six-parameter correction transform with an
//!    extended Kalman filter, seeded by an EPnP solve at initialization.
//! 5. [`pipeline`] orchestrates the per-frame loop including the
//!    no-detection fallback and multi-tool operation.
//!
//! [`dataset`] defines the on-disk sequence format (JSON manifest + PGM
//! frames) used by the synthetic harness and the CLI.

pub mod dataset;
pub mod geometry;
pub mod img;
pub mod pipeline;
pub mod pose;
pub mod qgo;
pub mod render;
pub mod tool;
pub mod verify;

pub use geometry::{CameraIntrinsics, GeometryError, KeypointSet, PoseVector, RigidTransform};
