//! Pose algebra, camera model and keypoint projection.
//!
//! Conventions shared by every module:
//! - translations in millimetres, angles in radians;
//! - Euler decomposition is extrinsic X-then-Y-then-Z, i.e. `R = Rz·Ry·Rx`;
//! - integer pixel coordinates address pixel centers, projections are
//!   continuous (sub-pixel);
//! - homogeneous points carry `w = 1`; serialized matrices are row-major 4x4.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of skeleton keypoints per tool.
pub const NUM_KEYPOINTS: usize = 14;

/// Points closer than this to the camera plane (mm) cannot be projected.
pub const MIN_DEPTH_MM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("keypoint {part_id} has non-positive depth ({depth} mm)")]
    NonPositiveDepth { part_id: usize, depth: f64 },
    #[error("rotation block is not orthonormal with determinant +1 (residual {residual})")]
    NotARotation { residual: f64 },
}

/// Rigid transform in SE(3): an orthonormal rotation plus a translation in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds from parts without validation; callers must supply a proper
    /// rotation. Use [`RigidTransform::try_from_parts`] for untrusted input.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Validates that `rotation` is orthonormal with determinant +1 within
    /// `tol` before constructing.
    pub fn try_from_parts(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tol: f64,
    ) -> Result<Self, GeometryError> {
        let residual = rotation_residual(&rotation);
        if residual > tol || rotation.determinant() < 0.0 {
            return Err(GeometryError::NotARotation { residual });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Applies `self` after `other`: `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rot_t = self.rotation.transpose();
        RigidTransform {
            rotation: rot_t,
            translation: -(rot_t * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Row-major 4x4 serialization used by the dataset manifest.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    /// Parses the row-major 4x4 form, validating the rotation block and the
    /// affine bottom row.
    pub fn from_row_major(m: &[f64; 16], tol: f64) -> Result<Self, GeometryError> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        let bottom_ok = m[12] == 0.0 && m[13] == 0.0 && m[14] == 0.0 && (m[15] - 1.0).abs() < tol;
        if !bottom_ok {
            return Err(GeometryError::NotARotation { residual: f64::MAX });
        }
        Self::try_from_parts(rotation, translation, tol)
    }

    pub fn approx_eq(&self, other: &RigidTransform, tol: f64) -> bool {
        (self.rotation - other.rotation).abs().max() <= tol
            && (self.translation - other.translation).abs().max() <= tol
    }

    /// Geodesic angle (radians) of the relative rotation `self * other^-1`.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation * other.rotation.transpose();
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn translation_distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

fn rotation_residual(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    ortho.max(det)
}

/// Six-parameter pose: Euler angles (rad) and translation (mm).
///
/// The composed rotation is `Rz(theta_z) * Ry(theta_y) * Rx(theta_x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseVector {
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
}

impl PoseVector {
    pub fn zero() -> Self {
        Self::from_array([0.0; 6])
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            theta_x: a[0],
            theta_y: a[1],
            theta_z: a[2],
            r_x: a[3],
            r_y: a[4],
            r_z: a[5],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.theta_x,
            self.theta_y,
            self.theta_z,
            self.r_x,
            self.r_y,
            self.r_z,
        ]
    }

    /// Wraps every angle to `(-pi, pi]`.
    pub fn wrapped(self) -> Self {
        Self {
            theta_x: wrap_angle(self.theta_x),
            theta_y: wrap_angle(self.theta_y),
            theta_z: wrap_angle(self.theta_z),
            ..self
        }
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = a % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// Axis rotation helpers shared with the kinematic chain.
pub mod rotations {
    use nalgebra::Matrix3;

    pub fn rot_x(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    }

    pub fn rot_y(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }

    pub fn rot_z(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }
}

use rotations::{rot_x, rot_y, rot_z};

/// Composes a [`PoseVector`] into a transform: `R = Rz·Ry·Rx`, `t = (rx,ry,rz)`.
pub fn pose_from_vector(x: &PoseVector) -> RigidTransform {
    let rotation = rot_z(x.theta_z) * rot_y(x.theta_y) * rot_x(x.theta_x);
    RigidTransform::from_parts(rotation, Vector3::new(x.r_x, x.r_y, x.r_z))
}

/// Recovers the [`PoseVector`] of a transform. Valid away from gimbal lock
/// (`|theta_y| < pi/2`); at the singularity `theta_x` is forced to zero.
pub fn vector_from_pose(t: &RigidTransform) -> PoseVector {
    let r = t.rotation();
    let sy = -r[(2, 0)];
    let theta_y = sy.clamp(-1.0, 1.0).asin();
    let (theta_x, theta_z) = if sy.abs() < 1.0 - 1e-12 {
        (
            r[(2, 1)].atan2(r[(2, 2)]),
            r[(1, 0)].atan2(r[(0, 0)]),
        )
    } else {
        // Gimbal lock: only theta_x ± theta_z is observable.
        (0.0, (-r[(0, 1)]).atan2(r[(1, 1)]))
    };
    let tr = t.translation();
    PoseVector {
        theta_x,
        theta_y,
        theta_z,
        r_x: tr[0],
        r_y: tr[1],
        r_z: tr[2],
    }
}

/// Pinhole camera intrinsics (pixels). Image size rides along so projections
/// can be bounds-checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive: fx={} fy={}", self.fx, self.fy));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64) {
            return Err(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(0.0 <= self.cy && self.cy < self.height as f64) {
            return Err(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    /// Projects a camera-frame point; `None` when the depth is at or behind
    /// the camera plane.
    pub fn project(&self, p: &Point3<f64>) -> Option<Point2<f64>> {
        if p.z <= MIN_DEPTH_MM {
            return None;
        }
        let inv_z = 1.0 / p.z;
        Some(Point2::new(
            self.fx * p.x * inv_z + self.cx,
            self.fy * p.y * inv_z + self.cy,
        ))
    }

    /// Back-projects a pixel to the camera-frame point at the given depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        Point3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }
}

/// The 14 tool skeleton keypoints, indexed by part id `0..=13`.
///
/// Symmetric pairs (a point and its mirrored twin) occupy consecutive ids.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    points: [Point3<f64>; NUM_KEYPOINTS],
}

impl KeypointSet {
    pub fn new(points: [Point3<f64>; NUM_KEYPOINTS]) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[Point3<f64>; NUM_KEYPOINTS] {
        &self.points
    }

    pub fn point(&self, part_id: usize) -> &Point3<f64> {
        &self.points[part_id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Point3<f64>)> {
        self.points.iter().enumerate()
    }

    pub fn map<F: FnMut(&Point3<f64>) -> Point3<f64>>(&self, mut f: F) -> Self {
        Self {
            points: std::array::from_fn(|i| f(&self.points[i])),
        }
    }
}

/// Projects all keypoints through `t_corr ∘ t_cal` into the image.
///
/// Output order matches keypoint order. Fails with the offending part id if
/// any transformed point lands at or behind the camera plane.
pub fn project_keypoints(
    keypoints: &KeypointSet,
    t_corr: &RigidTransform,
    t_cal: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<[Point2<f64>; NUM_KEYPOINTS], GeometryError> {
    let chain = t_corr.compose(t_cal);
    let mut out = [Point2::origin(); NUM_KEYPOINTS];
    for (part_id, p) in keypoints.iter() {
        let cam = chain.transform_point(p);
        out[part_id] = intrinsics
            .project(&cam)
            .ok_or(GeometryError::NonPositiveDepth {
                part_id,
                depth: cam.z,
            })?;
    }
    Ok(out)
}
