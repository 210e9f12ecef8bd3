//! Online estimation of the hand-eye correction transform.
//!
//! The six correction parameters `x = [theta_x, theta_y, theta_z, rx, ry, rz]`
//! are maintained by an extended Kalman filter: the process model is the
//! identity (the calibration error drifts slowly), the measurement model
//! projects the tool keypoints through the corrected calibration chain into
//! pixel coordinates. An EPnP solve over verified 2D-3D correspondences
//! seeds the filter at start-up.

pub mod epnp;

use crate::geometry::{
    pose_from_vector, rotations::{rot_x, rot_y, rot_z}, CameraIntrinsics, GeometryError,
    KeypointSet, PoseVector, RigidTransform, NUM_KEYPOINTS,
};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Point2, Vector3, Vector6};
use thiserror::Error;

pub use epnp::{epnp_solve, PnpError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EkfError {
    #[error("no valid observations remain after masking and gating")]
    NoValidObservations,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Default process noise: slow calibration drift.
pub fn default_process_noise() -> Matrix6<f64> {
    Matrix6::from_diagonal(&Vector6::new(1e-6, 1e-6, 1e-6, 0.25, 0.25, 0.25))
}

/// Default per-coordinate measurement noise (pixels^2).
pub const DEFAULT_MEASUREMENT_VAR: f64 = 4.0;

/// Default initial covariance after EPnP seeding.
pub fn initial_covariance() -> Matrix6<f64> {
    Matrix6::from_diagonal(&Vector6::new(0.01, 0.01, 0.01, 25.0, 25.0, 25.0))
}

/// EKF state over the six correction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionState {
    pub x: PoseVector,
    /// 6x6 state covariance.
    pub p: Matrix6<f64>,
    /// 6x6 process noise added per predict step.
    pub q: Matrix6<f64>,
    /// Measurement noise variance per pixel coordinate (R = var * I).
    pub measurement_var: f64,
}

impl CorrectionState {
    pub fn new(x: PoseVector, p: Matrix6<f64>) -> Self {
        Self {
            x,
            p,
            q: default_process_noise(),
            measurement_var: DEFAULT_MEASUREMENT_VAR,
        }
    }

    pub fn correction_transform(&self) -> RigidTransform {
        pose_from_vector(&self.x)
    }
}

/// One 2D detection of a tool part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub part_id: usize,
    pub pixel: Point2<f64>,
    pub valid: bool,
}

/// Prediction step: identity transition, covariance grows by Q.
pub fn predict(state: &CorrectionState) -> CorrectionState {
    let mut p = state.p + state.q;
    symmetrize(&mut p);
    CorrectionState {
        x: state.x,
        p,
        q: state.q,
        measurement_var: state.measurement_var,
    }
}

/// Measurement function h(x): the stacked pixel coordinates
/// `[u1, v1, ..., un, vn]` of all keypoints projected through
/// `f(x) ∘ T_cal`.
pub fn measurement_fn(
    x: &PoseVector,
    keypoints: &KeypointSet,
    t_cal: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<DVector<f64>, GeometryError> {
    let part_ids: Vec<usize> = (0..NUM_KEYPOINTS).collect();
    measurement_subset(x, keypoints, t_cal, intrinsics, &part_ids)
}

fn measurement_subset(
    x: &PoseVector,
    keypoints: &KeypointSet,
    t_cal: &RigidTransform,
    intrinsics: &CameraIntrinsics,
    part_ids: &[usize],
) -> Result<DVector<f64>, GeometryError> {
    let t_corr = pose_from_vector(x);
    let chain = t_corr.compose(t_cal);
    let mut out = DVector::zeros(2 * part_ids.len());
    for (row, &pid) in part_ids.iter().enumerate() {
        let cam = chain.transform_point(keypoints.point(pid));
        let px = intrinsics
            .project(&cam)
            .ok_or(GeometryError::NonPositiveDepth {
                part_id: pid,
                depth: cam.z,
            })?;
        out[2 * row] = px.x;
        out[2 * row + 1] = px.y;
    }
    Ok(out)
}

fn rot_x_deriv(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn rot_y_deriv(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn rot_z_deriv(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Analytic Jacobian of the measurement function, 2n x 6, columns ordered
/// `[theta_x, theta_y, theta_z, rx, ry, rz]`.
pub fn jacobian(
    x: &PoseVector,
    keypoints: &KeypointSet,
    t_cal: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<DMatrix<f64>, GeometryError> {
    let part_ids: Vec<usize> = (0..NUM_KEYPOINTS).collect();
    jacobian_subset(x, keypoints, t_cal, intrinsics, &part_ids)
}

fn jacobian_subset(
    x: &PoseVector,
    keypoints: &KeypointSet,
    t_cal: &RigidTransform,
    intrinsics: &CameraIntrinsics,
    part_ids: &[usize],
) -> Result<DMatrix<f64>, GeometryError> {
    let rx = rot_x(x.theta_x);
    let ry = rot_y(x.theta_y);
    let rz = rot_z(x.theta_z);
    let rot = rz * ry * rx;
    let d_theta_x = rz * ry * rot_x_deriv(x.theta_x);
    let d_theta_y = rz * rot_y_deriv(x.theta_y) * rx;
    let d_theta_z = rot_z_deriv(x.theta_z) * ry * rx;
    let t = Vector3::new(x.r_x, x.r_y, x.r_z);

    let mut jac = DMatrix::zeros(2 * part_ids.len(), 6);
    for (row, &pid) in part_ids.iter().enumerate() {
        let p0 = t_cal.transform_point(keypoints.point(pid)).coords;
        let cam = rot * p0 + t;
        if cam.z <= crate::geometry::MIN_DEPTH_MM {
            return Err(GeometryError::NonPositiveDepth {
                part_id: pid,
                depth: cam.z,
            });
        }
        let inv_z = 1.0 / cam.z;
        let fx_z = intrinsics.fx * inv_z;
        let fy_z = intrinsics.fy * inv_z;
        let fx_xz2 = intrinsics.fx * cam.x * inv_z * inv_z;
        let fy_yz2 = intrinsics.fy * cam.y * inv_z * inv_z;

        // d p_cam / d theta_k
        let dp = [d_theta_x * p0, d_theta_y * p0, d_theta_z * p0];
        for (col, d) in dp.iter().enumerate() {
            jac[(2 * row, col)] = fx_z * d.x - fx_xz2 * d.z;
            jac[(2 * row + 1, col)] = fy_z * d.y - fy_yz2 * d.z;
        }
        // d p_cam / d t = I
        jac[(2 * row, 3)] = fx_z;
        jac[(2 * row, 5)] = -fx_xz2;
        jac[(2 * row + 1, 4)] = fy_z;
        jac[(2 * row + 1, 5)] = -fy_yz2;
    }
    Ok(jac)
}

fn symmetrize(m: &mut Matrix6<f64>) {
    let sym = (*m + m.transpose()) * 0.5;
    *m = sym;
}

/// Symmetrizes and clamps the covariance to PSD (eigenvalues floored at 0;
/// small negative values from rounding are tolerated and removed).
fn make_psd(m: &mut Matrix6<f64>) {
    symmetrize(m);
    let eig = nalgebra::SymmetricEigen::new(*m);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return;
    }
    let clamped = Vector6::from_iterator(eig.eigenvalues.iter().map(|&l| l.max(0.0)));
    let rebuilt =
        eig.eigenvectors * Matrix6::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    *m = rebuilt;
    symmetrize(m);
}

/// EKF correction step.
///
/// Only valid observations enter; rows whose innovation exceeds `3 sigma`
/// (from the innovation covariance diagonal) are dropped when `gating` is
/// enabled. Covariance is propagated in Joseph form and kept symmetric PSD;
/// angles are wrapped after the update.
pub fn update(
    state: &CorrectionState,
    observations: &[Observation],
    keypoints: &KeypointSet,
    t_cal: &RigidTransform,
    intrinsics: &CameraIntrinsics,
    gating: bool,
) -> Result<CorrectionState, EkfError> {
    let valid: Vec<&Observation> = observations.iter().filter(|o| o.valid).collect();
    if valid.is_empty() {
        return Err(EkfError::NoValidObservations);
    }
    let part_ids: Vec<usize> = valid.iter().map(|o| o.part_id).collect();
    let h = measurement_subset(&state.x, keypoints, t_cal, intrinsics, &part_ids)?;
    let jac = jacobian_subset(&state.x, keypoints, t_cal, intrinsics, &part_ids)?;

    let mut z = DVector::zeros(2 * valid.len());
    for (row, o) in valid.iter().enumerate() {
        z[2 * row] = o.pixel.x;
        z[2 * row + 1] = o.pixel.y;
    }
    let innovation = &z - &h;

    // Innovation gating per coordinate row.
    let kept_rows: Vec<usize> = if gating {
        let s_diag: Vec<f64> = (0..innovation.len())
            .map(|i| {
                let ji = jac.row(i);
                (ji * state.p * ji.transpose())[(0, 0)] + state.measurement_var
            })
            .collect();
        (0..innovation.len())
            .filter(|&i| innovation[i].abs() <= 3.0 * s_diag[i].sqrt())
            .collect()
    } else {
        (0..innovation.len()).collect()
    };
    if kept_rows.is_empty() {
        return Err(EkfError::NoValidObservations);
    }

    let m = kept_rows.len();
    let mut jac_kept = DMatrix::zeros(m, 6);
    let mut y = DVector::zeros(m);
    for (out_row, &i) in kept_rows.iter().enumerate() {
        jac_kept.set_row(out_row, &jac.row(i));
        y[out_row] = innovation[i];
    }

    // S = J P J^T + R
    let mut s = &jac_kept * state.p * jac_kept.transpose();
    for i in 0..m {
        s[(i, i)] += state.measurement_var;
    }
    let chol = s
        .clone()
        .cholesky()
        .ok_or(EkfError::NoValidObservations)?;
    // K = P J^T S^-1, via S K^T = J P
    let k_t = chol.solve(&(&jac_kept * state.p));
    let k = k_t.transpose();

    let dx = &k * &y;
    let mut x_arr = state.x.to_array();
    for i in 0..6 {
        x_arr[i] += dx[i];
    }
    let x_new = PoseVector::from_array(x_arr).wrapped();

    // Joseph-form covariance update.
    let i6 = Matrix6::<f64>::identity();
    let kj = &k * &jac_kept;
    let mut kj6 = Matrix6::zeros();
    for r in 0..6 {
        for c in 0..6 {
            kj6[(r, c)] = kj[(r, c)];
        }
    }
    let a = i6 - kj6;
    let krk = &k * state.measurement_var * k.transpose();
    let mut krk6 = Matrix6::zeros();
    for r in 0..6 {
        for c in 0..6 {
            krk6[(r, c)] = krk[(r, c)];
        }
    }
    let mut p_new = a * state.p * a.transpose() + krk6;
    make_psd(&mut p_new);

    Ok(CorrectionState {
        x: x_new,
        p: p_new,
        q: state.q,
        measurement_var: state.measurement_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vector_from_pose;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 800.0,
            fy: 780.0,
            cx: 360.0,
            cy: 288.0,
            width: 720,
            height: 576,
        }
    }

    fn spread_keypoints(rng: &mut impl Rng, depth: f64) -> KeypointSet {
        KeypointSet::new(std::array::from_fn(|_| {
            Point3::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-60.0..60.0),
                depth + rng.random_range(-40.0..40.0),
            )
        }))
    }

    #[test]
    fn predict_with_zero_q_is_noop() {
        let mut state = CorrectionState::new(PoseVector::zero(), initial_covariance());
        state.q = Matrix6::zeros();
        let next = predict(&state);
        assert_eq!(state.x, next.x);
        assert_eq!(state.p, next.p);
    }

    #[test]
    fn predict_grows_diagonal_by_q() {
        let state = CorrectionState::new(PoseVector::zero(), initial_covariance());
        let next = predict(&state);
        let diff = next.p - state.p;
        assert!((diff - state.q).abs().max() < 1e-15);
    }

    #[test]
    fn two_predicts_accumulate_linearly() {
        let state = CorrectionState::new(PoseVector::zero(), initial_covariance());
        let twice = predict(&predict(&state));
        let expected = state.p + state.q * 2.0;
        assert!((twice.p - expected).abs().max() < 1e-15);
    }

    #[test]
    fn measurement_at_zero_matches_identity_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = intrinsics();
        let kps = spread_keypoints(&mut rng, 300.0);
        let t_cal = RigidTransform::identity();
        let h = measurement_fn(&PoseVector::zero(), &kps, &t_cal, &k).unwrap();
        let projected = crate::geometry::project_keypoints(
            &kps,
            &RigidTransform::identity(),
            &t_cal,
            &k,
        )
        .unwrap();
        for i in 0..NUM_KEYPOINTS {
            assert!((h[2 * i] - projected[i].x).abs() < 1e-12);
            assert!((h[2 * i + 1] - projected[i].y).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_perturbation_contracts_off_axis_points() {
        // Moving points away from the camera (r_z > 0) pulls off-axis
        // projections toward the principal point.
        let k = intrinsics();
        let kps = KeypointSet::new(std::array::from_fn(|_| Point3::new(80.0, 60.0, 300.0)));
        let t_cal = RigidTransform::identity();
        let h0 = measurement_fn(&PoseVector::zero(), &kps, &t_cal, &k).unwrap();
        let pushed = PoseVector::from_array([0.0, 0.0, 0.0, 0.0, 0.0, 50.0]);
        let h1 = measurement_fn(&pushed, &kps, &t_cal, &k).unwrap();
        assert!((h1[0] - k.cx).abs() < (h0[0] - k.cx).abs());
        assert!((h1[1] - k.cy).abs() < (h0[1] - k.cy).abs());
    }

    #[test]
    fn measurement_two_point_rig_hand_evaluated() {
        // Points chosen so the chain can be evaluated by hand:
        // correction = 90 deg about z plus (10, 0, 0) mm,
        // calibration = +100 mm along z.
        let k = CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        };
        let mut points: [Point3<f64>; NUM_KEYPOINTS] =
            std::array::from_fn(|_| Point3::new(0.0, 0.0, 100.0));
        points[1] = Point3::new(20.0, 0.0, 100.0);
        let kps = KeypointSet::new(points);
        let t_cal = RigidTransform::from_parts(Matrix3::identity(), Vector3::new(0.0, 0.0, 100.0));
        let x = PoseVector::from_array([0.0, 0.0, std::f64::consts::FRAC_PI_2, 10.0, 0.0, 0.0]);
        let h = measurement_fn(&x, &kps, &t_cal, &k).unwrap();
        // Point 0: cal -> (0,0,200); Rz90 -> (0,0,200); +t -> (10,0,200).
        // u = 320 + 500*10/200 = 345, v = 240.
        assert!((h[0] - 345.0).abs() < 1e-9, "{}", h[0]);
        assert!((h[1] - 240.0).abs() < 1e-9);
        // Point 1: cal -> (20,0,200); Rz90 -> (0,20,200); +t -> (10,20,200).
        // u = 320 + 500*10/200 = 345, v = 240 + 500*20/200 = 290.
        assert!((h[2] - 345.0).abs() < 1e-9);
        assert!((h[3] - 290.0).abs() < 1e-9);
    }

    #[test]
    fn jacobian_translation_columns_on_optical_axis() {
        let k = intrinsics();
        let z = 400.0;
        let kps = KeypointSet::new(std::array::from_fn(|_| Point3::new(0.0, 0.0, z)));
        let jac = jacobian(
            &PoseVector::zero(),
            &kps,
            &RigidTransform::identity(),
            &k,
        )
        .unwrap();
        assert!((jac[(0, 3)] - k.fx / z).abs() < 1e-12); // du/drx
        assert!(jac[(0, 4)].abs() < 1e-12); // du/dry
        assert!((jac[(1, 4)] - k.fy / z).abs() < 1e-12); // dv/dry
        assert!(jac[(0, 5)].abs() < 1e-12); // on-axis: du/drz = 0
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = intrinsics();
        let t_cal = RigidTransform::identity();
        for _ in 0..100 {
            let kps = spread_keypoints(&mut rng, 350.0);
            let x = PoseVector {
                theta_x: rng.random_range(-0.5..0.5),
                theta_y: rng.random_range(-0.5..0.5),
                theta_z: rng.random_range(-0.5..0.5),
                r_x: rng.random_range(-30.0..30.0),
                r_y: rng.random_range(-30.0..30.0),
                r_z: rng.random_range(-30.0..30.0),
            };
            let jac = jacobian(&x, &kps, &t_cal, &k).unwrap();
            let step = 1e-5;
            for col in 0..6 {
                let mut plus = x.to_array();
                let mut minus = x.to_array();
                plus[col] += step;
                minus[col] -= step;
                let hp = measurement_fn(&PoseVector::from_array(plus), &kps, &t_cal, &k).unwrap();
                let hm = measurement_fn(&PoseVector::from_array(minus), &kps, &t_cal, &k).unwrap();
                for row in 0..2 * NUM_KEYPOINTS {
                    let fd = (hp[row] - hm[row]) / (2.0 * step);
                    let a = jac[(row, col)];
                    let rel = (a - fd).abs() / a.abs().max(1.0);
                    assert!(rel < 1e-4, "row {row} col {col}: analytic {a} vs fd {fd}");
                }
            }
        }
    }

    #[test]
    fn jacobian_rotation_block_is_classic_image_jacobian_at_zero() {
        // At x = 0 with identity calibration, d p_cam/d theta_k reduces to
        // the generator cross products, giving the standard point-rotation
        // image Jacobian.
        let k = intrinsics();
        let p = Point3::new(45.0, -30.0, 320.0);
        let kps = KeypointSet::new(std::array::from_fn(|_| p));
        let jac = jacobian(&PoseVector::zero(), &kps, &RigidTransform::identity(), &k).unwrap();
        let (xx, yy, zz) = (p.x, p.y, p.z);
        let expected = [
            [
                -k.fx * xx * yy / (zz * zz),
                k.fx + k.fx * xx * xx / (zz * zz),
                -k.fx * yy / zz,
            ],
            [
                -k.fy - k.fy * yy * yy / (zz * zz),
                k.fy * xx * yy / (zz * zz),
                k.fy * xx / zz,
            ],
        ];
        for r in 0..2 {
            for c in 0..3 {
                assert!(
                    (jac[(r, c)] - expected[r][c]).abs() < 1e-9,
                    "({r},{c}): {} vs {}",
                    jac[(r, c)],
                    expected[r][c]
                );
            }
        }
    }

    fn all_valid_observations(h: &DVector<f64>) -> Vec<Observation> {
        (0..NUM_KEYPOINTS)
            .map(|i| Observation {
                part_id: i,
                pixel: Point2::new(h[2 * i], h[2 * i + 1]),
                valid: true,
            })
            .collect()
    }

    #[test]
    fn zero_innovation_keeps_state_and_shrinks_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = intrinsics();
        let kps = spread_keypoints(&mut rng, 300.0);
        let t_cal = RigidTransform::identity();
        let state = CorrectionState::new(PoseVector::zero(), initial_covariance());
        let h = measurement_fn(&state.x, &kps, &t_cal, &k).unwrap();
        let obs = all_valid_observations(&h);
        let next = update(&state, &obs, &kps, &t_cal, &k, true).unwrap();
        for (a, b) in state.x.to_array().iter().zip(next.x.to_array().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(next.p.trace() < state.p.trace());
    }

    #[test]
    fn huge_measurement_noise_freezes_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = intrinsics();
        let kps = spread_keypoints(&mut rng, 300.0);
        let t_cal = RigidTransform::identity();
        let mut state = CorrectionState::new(PoseVector::zero(), initial_covariance());
        state.measurement_var = 1e12;
        let truth = PoseVector::from_array([0.02, -0.01, 0.03, 5.0, -2.0, 8.0]);
        let z = measurement_fn(&truth, &kps, &t_cal, &k).unwrap();
        let obs = all_valid_observations(&z);
        let next = update(&state, &obs, &kps, &t_cal, &k, false).unwrap();
        for (a, b) in state.x.to_array().iter().zip(next.x.to_array().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn iterated_updates_converge_to_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = intrinsics();
        // A rig with generous lateral and depth spread so all six parameters
        // are well observed.
        let kps = KeypointSet::new(std::array::from_fn(|_| {
            Point3::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(190.0..450.0),
            )
        }));
        let t_cal = RigidTransform::identity();
        let truth = PoseVector::from_array([0.05, -0.03, 0.02, 4.0, -6.0, 10.0]);
        let z = measurement_fn(&truth, &kps, &t_cal, &k).unwrap();
        let obs = all_valid_observations(&z);

        let mut state = CorrectionState::new(PoseVector::zero(), initial_covariance());
        for _ in 0..30 {
            state = predict(&state);
            state = update(&state, &obs, &kps, &t_cal, &k, true).unwrap();
        }
        for (a, b) in state.x.to_array().iter().zip(truth.to_array().iter()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn ekf_fixed_point_when_measurement_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = intrinsics();
        let kps = spread_keypoints(&mut rng, 280.0);
        let t_cal = RigidTransform::identity();
        let truth = PoseVector::from_array([0.05, -0.03, 0.02, 4.0, -6.0, 10.0]);
        let z = measurement_fn(&truth, &kps, &t_cal, &k).unwrap();
        let obs = all_valid_observations(&z);
        let mut state = CorrectionState::new(truth, initial_covariance());
        for _ in 0..20 {
            state = update(&state, &obs, &kps, &t_cal, &k, true).unwrap();
            for (a, b) in state.x.to_array().iter().zip(truth.to_array().iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn update_rejects_all_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = intrinsics();
        let kps = spread_keypoints(&mut rng, 280.0);
        let state = CorrectionState::new(PoseVector::zero(), initial_covariance());
        let obs = vec![Observation {
            part_id: 0,
            pixel: Point2::new(10.0, 10.0),
            valid: false,
        }];
        assert!(matches!(
            update(&state, &obs, &kps, &RigidTransform::identity(), &k, true),
            Err(EkfError::NoValidObservations)
        ));
    }

    #[test]
    fn covariance_stays_symmetric_psd_over_many_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = intrinsics();
        let t_cal = RigidTransform::identity();
        let kps = spread_keypoints(&mut rng, 320.0);
        let truth = PoseVector::from_array([0.03, 0.01, -0.02, 3.0, 1.0, -4.0]);
        let z = measurement_fn(&truth, &kps, &t_cal, &k).unwrap();
        let mut state = CorrectionState::new(PoseVector::zero(), initial_covariance());
        for iter in 0..10_000 {
            state = predict(&state);
            // Noisy observations over a random valid subset.
            let obs: Vec<Observation> = (0..NUM_KEYPOINTS)
                .map(|i| Observation {
                    part_id: i,
                    pixel: Point2::new(
                        z[2 * i] + rng.random_range(-2.0..2.0),
                        z[2 * i + 1] + rng.random_range(-2.0..2.0),
                    ),
                    valid: rng.random_bool(0.7),
                })
                .collect();
            if let Ok(next) = update(&state, &obs, &kps, &t_cal, &k, true) {
                state = next;
            }
            let asym = (state.p - state.p.transpose()).abs().max();
            assert!(asym < 1e-12, "iter {iter}: asymmetry {asym}");
            let eig = nalgebra::SymmetricEigen::new(state.p);
            let min = eig.eigenvalues.min();
            assert!(min >= -1e-9, "iter {iter}: min eigenvalue {min}");
        }
    }

    #[test]
    fn vector_from_pose_round_trip_of_correction() {
        let x = PoseVector::from_array([0.05, -0.03, 0.02, 4.0, -6.0, 10.0]);
        let t = pose_from_vector(&x);
        let back = vector_from_pose(&t);
        for (a, b) in x.to_array().iter().zip(back.to_array().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
