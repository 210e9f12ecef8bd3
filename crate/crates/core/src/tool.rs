//! Parametric articulated tool: a cylinder shaft, a box wrist housing and two
//! tapered-box jaws, plus the 14 skeleton keypoints defined in part-local
//! frames.
//!
//! Kinematic chain (all in the end-effector frame `E`, z pointing from shaft
//! toward the jaws):
//!
//! ```text
//! E --Rz(roll)--> shaft --Rx(pitch)--> housing
//!   --T(0,0,pivot)·Ry(yaw)--> jaw base --Ry(±open/2)--> jaw A / jaw B
//! ```
//!
//! Jaw opening therefore splits the jaws symmetrically in the x–z plane.

use crate::geometry::{
    rotations::{rot_x, rot_y, rot_z},
    KeypointSet, RigidTransform, NUM_KEYPOINTS,
};
use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("joint `{joint}` value {value} outside limits [{min}, {max}]")]
    JointLimitViolation {
        joint: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid tool model: {0}")]
    InvalidModel(String),
}

/// Rigid part a keypoint is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartFrame {
    Shaft,
    Housing,
    /// Jaw rotating toward +x when opening.
    JawA,
    /// Jaw rotating toward -x when opening.
    JawB,
}

pub const NUM_PARTS: usize = 4;

impl PartFrame {
    pub fn index(self) -> usize {
        match self {
            PartFrame::Shaft => 0,
            PartFrame::Housing => 1,
            PartFrame::JawA => 2,
            PartFrame::JawB => 3,
        }
    }
}

/// One skeleton keypoint: a part-local offset plus an optional outward
/// normal. Points with a normal are face-mounted (pins, logos) and are culled
/// when the face turns away from the camera; points without one (jaw tips)
/// are treated as visible from any direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSpec {
    pub name: String,
    pub frame: PartFrame,
    pub offset: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub roll: [f64; 2],
    pub pitch: [f64; 2],
    pub yaw: [f64; 2],
    pub open: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub open: f64,
}

impl JointState {
    pub fn zero() -> Self {
        Self {
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            open: 0.0,
        }
    }
}

/// Tool geometry in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolModel {
    pub shaft_radius: f64,
    pub shaft_length: f64,
    /// Housing half-extent along x (the faces carrying pins and logo).
    pub housing_half_width: f64,
    /// Housing half-extent along y.
    pub housing_half_height: f64,
    /// Distance from the pitch axis to the jaw pivot along z.
    pub pivot_offset: f64,
    pub jaw_length: f64,
    pub jaw_base_half_width: f64,
    pub jaw_base_half_height: f64,
    pub jaw_tip_half_width: f64,
    pub jaw_tip_half_height: f64,
    pub joint_limits: JointLimits,
    pub keypoints: Vec<KeypointSpec>,
}

impl ToolModel {
    /// Desk-scale stand-in for a wristed needle-driver style instrument.
    pub fn needle_driver() -> Self {
        use std::f64::consts::PI;
        let kp = |name: &str, frame: PartFrame, offset: [f64; 3], normal: Option<[f64; 3]>| {
            KeypointSpec {
                name: name.to_string(),
                frame,
                offset,
                normal,
            }
        };
        Self {
            shaft_radius: 5.0,
            shaft_length: 120.0,
            housing_half_width: 5.5,
            housing_half_height: 4.0,
            pivot_offset: 10.0,
            jaw_length: 18.0,
            jaw_base_half_width: 2.5,
            jaw_base_half_height: 2.0,
            jaw_tip_half_width: 0.8,
            jaw_tip_half_height: 0.6,
            joint_limits: JointLimits {
                roll: [-PI, PI],
                pitch: [-1.4, 1.4],
                yaw: [-1.2, 1.2],
                open: [0.0, 1.2],
            },
            keypoints: vec![
                kp("rear_pin_a", PartFrame::Shaft, [5.0, 0.0, -8.0], Some([1.0, 0.0, 0.0])),
                kp("rear_pin_b", PartFrame::Shaft, [-5.0, 0.0, -8.0], Some([-1.0, 0.0, 0.0])),
                kp("logo_a", PartFrame::Housing, [5.5, 0.0, 4.0], Some([1.0, 0.0, 0.0])),
                kp("logo_b", PartFrame::Housing, [-5.5, 0.0, 4.0], Some([-1.0, 0.0, 0.0])),
                kp("front_pin_a", PartFrame::Housing, [5.5, 0.0, 8.5], Some([1.0, 0.0, 0.0])),
                kp("front_pin_b", PartFrame::Housing, [-5.5, 0.0, 8.5], Some([-1.0, 0.0, 0.0])),
                kp("wrist_a", PartFrame::Housing, [5.5, 0.0, 10.0], Some([1.0, 0.0, 0.0])),
                kp("wrist_b", PartFrame::Housing, [-5.5, 0.0, 10.0], Some([-1.0, 0.0, 0.0])),
                kp("jaw_heel_a", PartFrame::JawA, [0.0, 0.0, 2.5], None),
                kp("jaw_heel_b", PartFrame::JawB, [0.0, 0.0, 2.5], None),
                kp("jaw_mid_a", PartFrame::JawA, [0.0, 0.0, 9.0], None),
                kp("jaw_mid_b", PartFrame::JawB, [0.0, 0.0, 9.0], None),
                kp("jaw_tip_a", PartFrame::JawA, [0.0, 0.0, 18.0], None),
                kp("jaw_tip_b", PartFrame::JawB, [0.0, 0.0, 18.0], None),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        if self.keypoints.len() != NUM_KEYPOINTS {
            return Err(ToolError::InvalidModel(format!(
                "expected {NUM_KEYPOINTS} keypoints, got {}",
                self.keypoints.len()
            )));
        }
        let positive = [
            ("shaft_radius", self.shaft_radius),
            ("shaft_length", self.shaft_length),
            ("housing_half_width", self.housing_half_width),
            ("housing_half_height", self.housing_half_height),
            ("pivot_offset", self.pivot_offset),
            ("jaw_length", self.jaw_length),
            ("jaw_base_half_width", self.jaw_base_half_width),
            ("jaw_base_half_height", self.jaw_base_half_height),
            ("jaw_tip_half_width", self.jaw_tip_half_width),
            ("jaw_tip_half_height", self.jaw_tip_half_height),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ToolError::InvalidModel(format!("{name} must be positive, got {v}")));
            }
        }
        let limits = [
            ("roll", self.joint_limits.roll),
            ("pitch", self.joint_limits.pitch),
            ("yaw", self.joint_limits.yaw),
            ("open", self.joint_limits.open),
        ];
        for (name, [lo, hi]) in limits {
            if !(lo < hi) {
                return Err(ToolError::InvalidModel(format!(
                    "joint `{name}` limits [{lo}, {hi}] are empty"
                )));
            }
        }
        Ok(())
    }

    fn check_joint(name: &'static str, value: f64, limits: [f64; 2]) -> Result<(), ToolError> {
        if value < limits[0] || value > limits[1] || !value.is_finite() {
            return Err(ToolError::JointLimitViolation {
                joint: name,
                value,
                min: limits[0],
                max: limits[1],
            });
        }
        Ok(())
    }

    pub fn check_joints(&self, joints: &JointState) -> Result<(), ToolError> {
        Self::check_joint("roll", joints.roll, self.joint_limits.roll)?;
        Self::check_joint("pitch", joints.pitch, self.joint_limits.pitch)?;
        Self::check_joint("yaw", joints.yaw, self.joint_limits.yaw)?;
        Self::check_joint("open", joints.open, self.joint_limits.open)?;
        Ok(())
    }

    /// Part frames relative to `E` for the given joint state.
    pub fn part_frames(&self, joints: &JointState) -> Result<[RigidTransform; NUM_PARTS], ToolError> {
        self.check_joints(joints)?;
        let shaft = RigidTransform::from_parts(rot_z(joints.roll), Vector3::zeros());
        let housing = shaft.compose(&RigidTransform::from_parts(rot_x(joints.pitch), Vector3::zeros()));
        let jaw_base = housing.compose(&RigidTransform::from_parts(
            rot_y(joints.yaw),
            Vector3::new(0.0, 0.0, self.pivot_offset),
        ));
        let jaw_a = jaw_base.compose(&RigidTransform::from_parts(
            rot_y(joints.open * 0.5),
            Vector3::zeros(),
        ));
        let jaw_b = jaw_base.compose(&RigidTransform::from_parts(
            rot_y(-joints.open * 0.5),
            Vector3::zeros(),
        ));
        Ok([shaft, housing, jaw_a, jaw_b])
    }

    /// Convex hull vertices of each part in its own part frame.
    pub fn part_local_vertices(&self) -> [Vec<Point3<f64>>; NUM_PARTS] {
        const RING: usize = 16;
        let mut shaft = Vec::with_capacity(RING * 2);
        for i in 0..RING {
            let a = i as f64 / RING as f64 * std::f64::consts::TAU;
            let (s, c) = a.sin_cos();
            let (x, y) = (self.shaft_radius * c, self.shaft_radius * s);
            shaft.push(Point3::new(x, y, -self.shaft_length));
            shaft.push(Point3::new(x, y, 0.0));
        }
        let boxed = |hx: f64, hy: f64, z0: f64, z1: f64| -> Vec<Point3<f64>> {
            let mut v = Vec::with_capacity(8);
            for &z in &[z0, z1] {
                for &sx in &[-1.0, 1.0] {
                    for &sy in &[-1.0, 1.0] {
                        v.push(Point3::new(sx * hx, sy * hy, z));
                    }
                }
            }
            v
        };
        let housing = boxed(
            self.housing_half_width,
            self.housing_half_height,
            0.0,
            self.pivot_offset,
        );
        let jaw = {
            let mut v = Vec::with_capacity(8);
            for &sx in &[-1.0, 1.0] {
                for &sy in &[-1.0, 1.0] {
                    v.push(Point3::new(
                        sx * self.jaw_base_half_width,
                        sy * self.jaw_base_half_height,
                        0.0,
                    ));
                    v.push(Point3::new(
                        sx * self.jaw_tip_half_width,
                        sy * self.jaw_tip_half_height,
                        self.jaw_length,
                    ));
                }
            }
            v
        };
        [shaft, housing, jaw.clone(), jaw]
    }

    /// Forward kinematics: the 14 keypoints in the robot base frame `B`.
    pub fn pose_tool(
        &self,
        joints: &JointState,
        t_e_b: &RigidTransform,
    ) -> Result<KeypointSet, ToolError> {
        let frames = self.part_frames(joints)?;
        let mut points = [Point3::origin(); NUM_KEYPOINTS];
        for (i, spec) in self.keypoints.iter().enumerate() {
            let local = Point3::new(spec.offset[0], spec.offset[1], spec.offset[2]);
            let in_e = frames[spec.frame.index()].transform_point(&local);
            points[i] = t_e_b.transform_point(&in_e);
        }
        Ok(KeypointSet::new(points))
    }

    /// Keypoint outward normals in the base frame (None for edge features).
    pub fn keypoint_normals(
        &self,
        joints: &JointState,
        t_e_b: &RigidTransform,
    ) -> Result<[Option<Vector3<f64>>; NUM_KEYPOINTS], ToolError> {
        let frames = self.part_frames(joints)?;
        let mut out: [Option<Vector3<f64>>; NUM_KEYPOINTS] = [None; NUM_KEYPOINTS];
        for (i, spec) in self.keypoints.iter().enumerate() {
            if let Some(n) = spec.normal {
                let local = Vector3::new(n[0], n[1], n[2]);
                let in_e = frames[spec.frame.index()].transform_vector(&local);
                out[i] = Some(t_e_b.transform_vector(&in_e));
            }
        }
        Ok(out)
    }

    pub fn keypoint_part(&self, part_id: usize) -> PartFrame {
        self.keypoints[part_id].frame
    }
}

/// Reflection across the x-z plane (y -> -y), used by the mirror tests.
pub fn reflect_y() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0)
}
