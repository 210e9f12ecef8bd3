use tooltrack_core::geometry::*;
use tooltrack_core::render::*;
use tooltrack_core::tool::*;
use nalgebra::{Matrix3, Vector3, Point3, Point2};
use std::f64::consts::FRAC_PI_2;

fn side_view() -> RigidTransform {
    pose_from_vector(&PoseVector::from_array([FRAC_PI_2, 0.0, 0.0, 0.0, 0.0, 0.0]))
}

fn main() {
    let k = CameraIntrinsics { fx: 800.0, fy: 800.0, cx: 360.0, cy: 288.0, width: 720, height: 576 };
    let t_b_c = RigidTransform::from_parts(Matrix3::identity(), Vector3::new(0.0, 0.0, 250.0));
    let model = ToolModel::needle_driver();

    // symmetry config
    let (sil, out) = render(&model, &JointState::zero(), &side_view(), &t_b_c, &k).unwrap();
    let cx = 360i64;
    let mut bad = 0;
    for y in 0..sil.height {
        let row = sil.row(y);
        if let (Some(l), Some(r)) = (row.iter().position(|v| *v > 0), row.iter().rposition(|v| *v > 0)) {
            let (dl, dr) = (cx - l as i64, r as i64 - cx);
            if (dl - dr).abs() > 1 { if bad < 5 { println!("row {y}: dl {dl} dr {dr}"); } bad += 1; }
        }
    }
    println!("asymmetric rows: {bad}, visible: {}", out.visible_count());

    // general config visibility
    let joints = JointState { roll: -1.0, pitch: 0.3, yaw: 0.2, open: 0.5 };
    let (_, out1) = render(&model, &joints, &side_view(), &t_b_c, &k).unwrap();
    println!("general config visibility ({}): {:?}", out1.visible_count(), out1.visibility);

    // candidate occlusion configs: scan pitch/roll
    for roll in [-0.6, -0.8, -1.0, -1.2] {
        for pitch in [1.0, 1.2, 1.35] {
            let joints = JointState { roll, pitch, yaw: 0.0, open: 0.4 };
            let t_e_b = side_view();
            let chain = t_b_c.compose(&t_e_b);
            let frames = model.part_frames(&joints).unwrap();
            let locals = model.part_local_vertices();
            let logo_cam = chain.compose(&frames[1]).transform_point(&Point3::new(5.5, 0.0, 4.0));
            let logo_px = k.project(&logo_cam).unwrap();
            // facing?
            let n_b = model.keypoint_normals(&joints, &t_e_b).unwrap()[2].unwrap();
            let n_cam = t_b_c.transform_vector(&n_b);
            let facing = n_cam.normalize().dot(&logo_cam.coords.normalize());
            // jaw A hull
            let jaw_cam: Vec<Point3<f64>> = locals[2].iter().map(|v| chain.compose(&frames[2]).transform_point(v)).collect();
            let jaw_px: Vec<(Point2<f64>, f64)> = jaw_cam.iter().map(|p| (k.project(p).unwrap(), p.z)).collect();
            let max_z = jaw_cam.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
            let inside = point_in_poly(&jaw_px.iter().map(|(p, _)| (p.x, p.y)).collect::<Vec<_>>(), logo_px.x, logo_px.y);
            let (_, o) = render(&model, &joints, &t_e_b, &t_b_c, &k).unwrap();
            println!("roll {roll} pitch {pitch}: facing {facing:.2} logo_z {:.1} jaw_max_z {max_z:.1} inside_jawA_aabb~{inside} vis_logo {}",
                logo_cam.z, o.visibility[2]);
        }
    }
}

fn point_in_poly(pts: &[(f64, f64)], x: f64, y: f64) -> bool {
    // crude: axis-aligned bounding box check for scanning
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(px, py) in pts { x0 = x0.min(px); y0 = y0.min(py); x1 = x1.max(px); y1 = y1.max(py); }
    x >= x0 && x <= x1 && y >= y0 && y <= y1
}
