//! EPnP: non-iterative perspective-n-point pose from 2D-3D correspondences.
//!
//! The 3D points are expressed as barycentric combinations of four control
//! points (centroid plus principal directions). The camera-frame control
//! points lie in the null space of a 2n x 12 system; the null-space
//! combination weights (betas) are recovered for the N = 1, 2, 3 cases from
//! the inter-control-point distance constraints, polished by Gauss-Newton,
//! and the case with the lowest reprojection error wins. The final rotation
//! and translation come from closed-form absolute orientation.

use crate::geometry::{CameraIntrinsics, RigidTransform};
use nalgebra::{DMatrix, DVector, Matrix3, Point2, Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PnpError {
    #[error("need at least 4 correspondences, got {got}")]
    InsufficientPoints { got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
}

const NUM_CONTROL: usize = 4;

/// Solves for the transform `T` such that projecting `T * p3d` matches the
/// observed pixels.
pub fn epnp_solve(
    points_3d: &[Point3<f64>],
    points_2d: &[Point2<f64>],
    intrinsics: &CameraIntrinsics,
) -> Result<RigidTransform, PnpError> {
    let n = points_3d.len();
    if n < 4 || points_2d.len() != n {
        return Err(PnpError::InsufficientPoints {
            got: n.min(points_2d.len()),
        });
    }

    let control_w = choose_control_points(points_3d)?;
    let alphas = barycentric_coordinates(points_3d, &control_w)?;

    // 2n x 12 projection constraints.
    let mut m = DMatrix::<f64>::zeros(2 * n, 12);
    for i in 0..n {
        let (u, v) = (points_2d[i].x, points_2d[i].y);
        for j in 0..NUM_CONTROL {
            let a = alphas[i][j];
            m[(2 * i, 3 * j)] = a * intrinsics.fx;
            m[(2 * i, 3 * j + 2)] = a * (intrinsics.cx - u);
            m[(2 * i + 1, 3 * j + 1)] = a * intrinsics.fy;
            m[(2 * i + 1, 3 * j + 2)] = a * (intrinsics.cy - v);
        }
    }

    // Null-space basis: eigenvectors of M^T M for the 4 smallest eigenvalues.
    let mtm = m.transpose() * &m;
    let eig = nalgebra::SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut basis = [[Vector3::zeros(); NUM_CONTROL]; NUM_CONTROL];
    for (k, &col) in order.iter().take(NUM_CONTROL).enumerate() {
        let v = eig.eigenvectors.column(col);
        for j in 0..NUM_CONTROL {
            basis[k][j] = Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]);
        }
    }

    // Distance constraints between control points.
    let (l_mat, rho) = build_l_and_rho(&basis, &control_w);

    let beta_cases = [
        betas_approx_1(&l_mat, &rho),
        betas_approx_2(&l_mat, &rho),
        betas_approx_3(&l_mat, &rho),
    ];

    let mut best: Option<(f64, RigidTransform)> = None;
    for betas0 in beta_cases.into_iter().flatten() {
        let betas = gauss_newton(&l_mat, &rho, betas0);
        if let Some(pose) = pose_from_betas(&betas, &basis, &alphas, points_3d) {
            let err = reprojection_rms(&pose, points_3d, points_2d, intrinsics);
            if best.as_ref().map_or(true, |(e, _)| err < *e) {
                best = Some((err, pose));
            }
        }
    }
    best.map(|(_, pose)| pose)
        .ok_or_else(|| PnpError::DegenerateConfiguration("no usable beta case".into()))
}

/// RMS reprojection error in pixels.
pub fn reprojection_rms(
    pose: &RigidTransform,
    points_3d: &[Point3<f64>],
    points_2d: &[Point2<f64>],
    intrinsics: &CameraIntrinsics,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, px) in points_3d.iter().zip(points_2d.iter()) {
        let cam = pose.transform_point(p);
        match intrinsics.project(&cam) {
            Some(proj) => {
                sum += (proj - px).norm_squared();
                count += 1;
            }
            None => return f64::INFINITY,
        }
    }
    if count == 0 {
        return f64::INFINITY;
    }
    (sum / count as f64).sqrt()
}

/// Centroid plus principal directions scaled by the standard deviation along
/// each. Near-flat directions are floored so the barycentric basis stays
/// invertible; exactly collinear inputs are rejected.
fn choose_control_points(points: &[Point3<f64>]) -> Result<[Vector3<f64>; 4], PnpError> {
    let n = points.len() as f64;
    let mut centroid = Vector3::zeros();
    for p in points {
        centroid += p.coords;
    }
    centroid /= n;

    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    let lmid = eig.eigenvalues[order[1]].max(0.0);
    if lmax <= 0.0 || lmid <= lmax * 1e-12 {
        return Err(PnpError::DegenerateConfiguration(
            "3D points are collinear".into(),
        ));
    }
    let mut control = [Vector3::zeros(); 4];
    control[0] = centroid;
    for (idx, &col) in order.iter().enumerate() {
        let scale = eig.eigenvalues[col].max(0.0).sqrt().max(1e-3 * lmax.sqrt());
        control[idx + 1] = centroid + eig.eigenvectors.column(col) * scale;
    }
    Ok(control)
}

fn barycentric_coordinates(
    points: &[Point3<f64>],
    control: &[Vector3<f64>; 4],
) -> Result<Vec<[f64; 4]>, PnpError> {
    let basis = Matrix3::from_columns(&[
        control[1] - control[0],
        control[2] - control[0],
        control[3] - control[0],
    ]);
    let inv = basis.try_inverse().ok_or_else(|| {
        PnpError::DegenerateConfiguration("control point basis is singular".into())
    })?;
    Ok(points
        .iter()
        .map(|p| {
            let b = inv * (p.coords - control[0]);
            [1.0 - b.x - b.y - b.z, b.x, b.y, b.z]
        })
        .collect())
}

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// L (6x10) over the beta monomials
/// [b11, b12, b22, b13, b23, b33, b14, b24, b34, b44] and the squared
/// world-frame control distances rho (6).
fn build_l_and_rho(
    basis: &[[Vector3<f64>; 4]; 4],
    control_w: &[Vector3<f64>; 4],
) -> (DMatrix<f64>, DVector<f64>) {
    let mut l = DMatrix::zeros(6, 10);
    let mut rho = DVector::zeros(6);
    for (row, &(i, j)) in PAIRS.iter().enumerate() {
        let dv: [Vector3<f64>; 4] = std::array::from_fn(|k| basis[k][i] - basis[k][j]);
        l[(row, 0)] = dv[0].dot(&dv[0]);
        l[(row, 1)] = 2.0 * dv[0].dot(&dv[1]);
        l[(row, 2)] = dv[1].dot(&dv[1]);
        l[(row, 3)] = 2.0 * dv[0].dot(&dv[2]);
        l[(row, 4)] = 2.0 * dv[1].dot(&dv[2]);
        l[(row, 5)] = dv[2].dot(&dv[2]);
        l[(row, 6)] = 2.0 * dv[0].dot(&dv[3]);
        l[(row, 7)] = 2.0 * dv[1].dot(&dv[3]);
        l[(row, 8)] = 2.0 * dv[2].dot(&dv[3]);
        l[(row, 9)] = dv[3].dot(&dv[3]);
        rho[row] = (control_w[i] - control_w[j]).norm_squared();
    }
    (l, rho)
}

fn solve_ls(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    a.svd(true, true).solve(&b, 1e-12).ok()
}

/// N = 1 family: solve for [b11, b12, b13, b14].
fn betas_approx_1(l: &DMatrix<f64>, rho: &DVector<f64>) -> Option<[f64; 4]> {
    let cols = [0usize, 1, 3, 6];
    let mut a = DMatrix::zeros(6, 4);
    for (ci, &c) in cols.iter().enumerate() {
        a.set_column(ci, &l.column(c));
    }
    let x = solve_ls(a, rho.clone())?;
    let b1 = if x[0] < 0.0 { (-x[0]).sqrt() } else { x[0].sqrt() };
    let sign = if x[0] < 0.0 { -1.0 } else { 1.0 };
    if b1 == 0.0 {
        return None;
    }
    Some([b1, sign * x[1] / b1, sign * x[2] / b1, sign * x[3] / b1])
}

/// N = 2 family: solve for [b11, b12, b22].
fn betas_approx_2(l: &DMatrix<f64>, rho: &DVector<f64>) -> Option<[f64; 4]> {
    let cols = [0usize, 1, 2];
    let mut a = DMatrix::zeros(6, 3);
    for (ci, &c) in cols.iter().enumerate() {
        a.set_column(ci, &l.column(c));
    }
    let x = solve_ls(a, rho.clone())?;
    let mut b1 = if x[0] < 0.0 { (-x[0]).sqrt() } else { x[0].sqrt() };
    let b2 = if x[0] < 0.0 {
        if x[2] < 0.0 {
            (-x[2]).sqrt()
        } else {
            0.0
        }
    } else if x[2] > 0.0 {
        x[2].sqrt()
    } else {
        0.0
    };
    if x[1] < 0.0 {
        b1 = -b1;
    }
    Some([b1, b2, 0.0, 0.0])
}

/// N = 3 family: solve for [b11, b12, b22, b13, b23].
fn betas_approx_3(l: &DMatrix<f64>, rho: &DVector<f64>) -> Option<[f64; 4]> {
    let cols = [0usize, 1, 2, 3, 4];
    let mut a = DMatrix::zeros(6, 5);
    for (ci, &c) in cols.iter().enumerate() {
        a.set_column(ci, &l.column(c));
    }
    let x = solve_ls(a, rho.clone())?;
    let mut b1 = if x[0] < 0.0 { (-x[0]).sqrt() } else { x[0].sqrt() };
    let b2 = if x[0] < 0.0 {
        if x[2] < 0.0 {
            (-x[2]).sqrt()
        } else {
            0.0
        }
    } else if x[2] > 0.0 {
        x[2].sqrt()
    } else {
        0.0
    };
    if x[1] < 0.0 {
        b1 = -b1;
    }
    if b1 == 0.0 {
        return None;
    }
    let b3 = x[3] / b1;
    Some([b1, b2, b3, 0.0])
}

/// Gauss-Newton refinement of the betas on the 6 distance constraints.
fn gauss_newton(l: &DMatrix<f64>, rho: &DVector<f64>, mut betas: [f64; 4]) -> [f64; 4] {
    for _ in 0..6 {
        let mut a = DMatrix::zeros(6, 4);
        let mut e = DVector::zeros(6);
        for row in 0..6 {
            let b = &betas;
            let monomials = [
                b[0] * b[0],
                b[0] * b[1],
                b[1] * b[1],
                b[0] * b[2],
                b[1] * b[2],
                b[2] * b[2],
                b[0] * b[3],
                b[1] * b[3],
                b[2] * b[3],
                b[3] * b[3],
            ];
            let mut f = 0.0;
            for (c, mono) in monomials.iter().enumerate() {
                f += l[(row, c)] * mono;
            }
            e[row] = rho[row] - f;
            a[(row, 0)] = 2.0 * l[(row, 0)] * b[0]
                + l[(row, 1)] * b[1]
                + l[(row, 3)] * b[2]
                + l[(row, 6)] * b[3];
            a[(row, 1)] = l[(row, 1)] * b[0]
                + 2.0 * l[(row, 2)] * b[1]
                + l[(row, 4)] * b[2]
                + l[(row, 7)] * b[3];
            a[(row, 2)] = l[(row, 3)] * b[0]
                + l[(row, 4)] * b[1]
                + 2.0 * l[(row, 5)] * b[2]
                + l[(row, 8)] * b[3];
            a[(row, 3)] = l[(row, 6)] * b[0]
                + l[(row, 7)] * b[1]
                + l[(row, 8)] * b[2]
                + 2.0 * l[(row, 9)] * b[3];
        }
        match solve_ls(a, e) {
            Some(delta) => {
                for i in 0..4 {
                    betas[i] += delta[i];
                }
            }
            None => break,
        }
    }
    betas
}

/// Camera-frame reconstruction for given betas, then absolute orientation.
fn pose_from_betas(
    betas: &[f64; 4],
    basis: &[[Vector3<f64>; 4]; 4],
    alphas: &[[f64; 4]],
    points_3d: &[Point3<f64>],
) -> Option<RigidTransform> {
    let mut control_c = [Vector3::zeros(); 4];
    for j in 0..NUM_CONTROL {
        for k in 0..NUM_CONTROL {
            control_c[j] += basis[k][j] * betas[k];
        }
    }
    let mut cam_points: Vec<Vector3<f64>> = Vec::with_capacity(points_3d.len());
    let mut depth_sum = 0.0;
    for a in alphas {
        let mut p = Vector3::zeros();
        for j in 0..NUM_CONTROL {
            p += control_c[j] * a[j];
        }
        depth_sum += p.z;
        cam_points.push(p);
    }
    if depth_sum < 0.0 {
        for p in cam_points.iter_mut() {
            *p = -*p;
        }
    }
    absolute_orientation(points_3d, &cam_points)
}

/// Closed-form rigid alignment: finds R, t with cam ~= R * world + t.
fn absolute_orientation(
    world: &[Point3<f64>],
    cam: &[Vector3<f64>],
) -> Option<RigidTransform> {
    let n = world.len() as f64;
    let mut cw = Vector3::zeros();
    let mut cc = Vector3::zeros();
    for (w, c) in world.iter().zip(cam.iter()) {
        cw += w.coords;
        cc += *c;
    }
    cw /= n;
    cc /= n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam.iter()) {
        h += (w.coords - cw) * (c - cc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut rot = v_t.transpose() * u.transpose();
    if rot.determinant() < 0.0 {
        let mut v = v_t.transpose();
        v.column_mut(2).neg_mut();
        rot = v * u.transpose();
    }
    let t = cc - rot * cw;
    Some(RigidTransform::from_parts(rot, t))
}
