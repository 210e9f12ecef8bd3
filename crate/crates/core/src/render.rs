//! Silhouette renderer for the parametric tool.
//!
//! Each rigid part is drawn as the scanline-filled convex hull of its
//! projected vertices; the silhouette is the union over parts (and tools).
//! Keypoint visibility combines three tests:
//!
//! - the projected keypoint lies inside the image bounds;
//! - face-mounted keypoints must face the camera (outward normal against the
//!   viewing ray);
//! - no *other* part stands in front of the keypoint along its viewing ray.
//!   The ray is intersected with the part solids (cylinder, box, frustum);
//!   surfaces within [`OCCLUSION_SLACK_MM`] of the keypoint's own depth do
//!   not occlude, so adjacent parts sharing a junction don't shadow their
//!   own keypoints.
//!
//! Rendering is deterministic: identical inputs produce bit-identical masks.

use crate::geometry::{CameraIntrinsics, RigidTransform, MIN_DEPTH_MM, NUM_KEYPOINTS};
use crate::img::GrayImage;
use crate::tool::{JointState, ToolError, ToolModel, NUM_PARTS};
use nalgebra::{Point2, Point3, Vector3};
use thiserror::Error;

/// Surfaces closer than this to a keypoint's own depth do not occlude it.
pub const OCCLUSION_SLACK_MM: f64 = 2.0;

/// Minimum cosine margin for the facing test of face-mounted keypoints.
const FACING_MARGIN: f64 = -0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("tool {tool_idx} has no visible keypoints")]
    ToolOutOfView { tool_idx: usize },
    #[error(transparent)]
    Tool(#[from] ToolError),
}

/// A tool instance placed in the scene.
#[derive(Debug, Clone)]
pub struct ToolPose<'a> {
    pub model: &'a ToolModel,
    pub joints: JointState,
    pub t_e_b: RigidTransform,
}

/// Per-tool render products. Keypoints that cannot be projected (at or
/// behind the camera plane) carry NaN pixels and `visibility = false`.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub keypoints_2d: [Point2<f64>; NUM_KEYPOINTS],
    /// Camera-frame z of each keypoint (mm).
    pub depths: [f64; NUM_KEYPOINTS],
    pub visibility: [bool; NUM_KEYPOINTS],
}

impl RenderOutput {
    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|v| **v).count()
    }
}

/// A combined scene render: the union silhouette plus per-tool outputs.
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub silhouette: GrayImage,
    pub tools: Vec<RenderOutput>,
}

/// One solid part posed in camera frame: `to_local` maps camera points into
/// the part's local frame where the solid has an axis-aligned description.
struct PartSolid {
    tool_idx: usize,
    part: usize,
    to_local: RigidTransform,
    shape: Shape,
}

enum Shape {
    /// Cylinder along local z in [z0, z1] with the given radius.
    Cylinder { radius: f64, z0: f64, z1: f64 },
    /// Box spanning [-hx, hx] x [-hy, hy] x [z0, z1].
    Box { hx: f64, hy: f64, z0: f64, z1: f64 },
    /// Tapered box from half-extents (bx, by) at z = 0 to (tx, ty) at z = len.
    Frustum { bx: f64, by: f64, tx: f64, ty: f64, len: f64 },
}

impl PartSolid {
    /// Camera-frame depth (z) where the viewing ray toward `dir` first
    /// enters the solid, if it does.
    fn entry_depth(&self, dir: &Vector3<f64>) -> Option<f64> {
        let o = self.to_local.translation();
        let d = self.to_local.rotation() * dir;
        let (mut t0, mut t1) = (1e-9f64, f64::INFINITY);

        let mut clip_slab = |p: f64, q: f64, lo: f64, hi: f64| -> bool {
            // o + t d within [lo, hi] along one axis (p = origin coord,
            // q = direction coord).
            if q.abs() < 1e-15 {
                return p >= lo && p <= hi;
            }
            let (mut a, mut b) = ((lo - p) / q, (hi - p) / q);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            t0 <= t1
        };

        match self.shape {
            Shape::Cylinder { radius, z0, z1 } => {
                if !clip_slab(o.z, d.z, z0, z1) {
                    return None;
                }
                // |o.xy + t d.xy|^2 <= r^2
                let a = d.x * d.x + d.y * d.y;
                let b = 2.0 * (o.x * d.x + o.y * d.y);
                let c = o.x * o.x + o.y * o.y - radius * radius;
                if a < 1e-15 {
                    if c > 0.0 {
                        return None;
                    }
                } else {
                    let disc = b * b - 4.0 * a * c;
                    if disc < 0.0 {
                        return None;
                    }
                    let s = disc.sqrt();
                    let (ra, rb) = ((-b - s) / (2.0 * a), (-b + s) / (2.0 * a));
                    t0 = t0.max(ra);
                    t1 = t1.min(rb);
                    if t0 > t1 {
                        return None;
                    }
                }
            }
            Shape::Box { hx, hy, z0, z1 } => {
                if !clip_slab(o.x, d.x, -hx, hx)
                    || !clip_slab(o.y, d.y, -hy, hy)
                    || !clip_slab(o.z, d.z, z0, z1)
                {
                    return None;
                }
            }
            Shape::Frustum { bx, by, tx, ty, len } => {
                if !clip_slab(o.z, d.z, 0.0, len) {
                    return None;
                }
                // Four side planes n . p <= k with outward normals.
                let planes = [
                    (Vector3::new(len, 0.0, bx - tx), len * bx),
                    (Vector3::new(-len, 0.0, bx - tx), len * bx),
                    (Vector3::new(0.0, len, by - ty), len * by),
                    (Vector3::new(0.0, -len, by - ty), len * by),
                ];
                for (n, k) in planes {
                    let denom = n.dot(&d);
                    let num = k - n.dot(&o);
                    if denom.abs() < 1e-15 {
                        if num < 0.0 {
                            return None;
                        }
                    } else {
                        let t = num / denom;
                        if denom > 0.0 {
                            t1 = t1.min(t);
                        } else {
                            t0 = t0.max(t);
                        }
                        if t0 > t1 {
                            return None;
                        }
                    }
                }
            }
        }
        if t0 > t1 {
            return None;
        }
        // Depth of the entry point in camera frame: ray = t * dir.
        Some(t0 * dir.z)
    }
}

fn part_solids(model: &ToolModel, shape_for: usize) -> Shape {
    match shape_for {
        0 => Shape::Cylinder {
            radius: model.shaft_radius,
            z0: -model.shaft_length,
            z1: 0.0,
        },
        1 => Shape::Box {
            hx: model.housing_half_width,
            hy: model.housing_half_height,
            z0: 0.0,
            z1: model.pivot_offset,
        },
        _ => Shape::Frustum {
            bx: model.jaw_base_half_width,
            by: model.jaw_base_half_height,
            tx: model.jaw_tip_half_width,
            ty: model.jaw_tip_half_height,
            len: model.jaw_length,
        },
    }
}

/// Renders every tool into one silhouette with a shared occlusion test, so
/// tools can shadow each other's keypoints.
pub fn render_scene(
    scene: &[ToolPose<'_>],
    t_b_c: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<SceneRender, RenderError> {
    let width = intrinsics.width as usize;
    let height = intrinsics.height as usize;
    let mut silhouette = GrayImage::new(width, height);

    // Pose every part solid in camera frame.
    let mut solids: Vec<PartSolid> = Vec::new();
    let mut part_chains: Vec<[RigidTransform; NUM_PARTS]> = Vec::new();
    for (tool_idx, tp) in scene.iter().enumerate() {
        let frames = tp.model.part_frames(&tp.joints)?;
        let mut chains = [RigidTransform::identity(); NUM_PARTS];
        for part in 0..NUM_PARTS {
            let to_cam = t_b_c.compose(&tp.t_e_b).compose(&frames[part]);
            chains[part] = to_cam;
            solids.push(PartSolid {
                tool_idx,
                part,
                to_local: to_cam.inverse(),
                shape: part_solids(tp.model, part),
            });
        }
        part_chains.push(chains);
    }

    // Keypoints, facing and occlusion.
    let mut outputs = Vec::with_capacity(scene.len());
    for (tool_idx, tp) in scene.iter().enumerate() {
        let kps = tp.model.pose_tool(&tp.joints, &tp.t_e_b)?;
        let normals = tp.model.keypoint_normals(&tp.joints, &tp.t_e_b)?;
        let mut out = RenderOutput {
            keypoints_2d: [Point2::new(f64::NAN, f64::NAN); NUM_KEYPOINTS],
            depths: [f64::NAN; NUM_KEYPOINTS],
            visibility: [false; NUM_KEYPOINTS],
        };
        for (i, p_b) in kps.iter() {
            let cam = t_b_c.transform_point(p_b);
            out.depths[i] = cam.z;
            let Some(px) = intrinsics.project(&cam) else {
                continue;
            };
            out.keypoints_2d[i] = px;
            if !intrinsics.contains(&px) {
                continue;
            }
            let facing = match normals[i] {
                None => true,
                Some(n_b) => {
                    let n_cam = t_b_c.transform_vector(&n_b);
                    let view = cam.coords.normalize();
                    n_cam.normalize().dot(&view) < FACING_MARGIN
                }
            };
            if !facing {
                continue;
            }
            let own_part = tp.model.keypoint_part(i).index();
            let dir = cam.coords;
            let occluded = solids
                .iter()
                .filter(|s| !(s.tool_idx == tool_idx && s.part == own_part))
                .filter_map(|s| s.entry_depth(&dir))
                .any(|depth| depth + OCCLUSION_SLACK_MM <= cam.z);
            out.visibility[i] = !occluded;
        }
        outputs.push(out);
    }

    // Silhouette: scanline-filled convex hulls of the projected vertices.
    for (tool_idx, tp) in scene.iter().enumerate() {
        let locals = tp.model.part_local_vertices();
        for part in 0..NUM_PARTS {
            let to_cam = &part_chains[tool_idx][part];
            let mut projected: Vec<Point2<f64>> = Vec::with_capacity(locals[part].len());
            let mut behind = false;
            for v in &locals[part] {
                let cam = to_cam.transform_point(v);
                if cam.z <= MIN_DEPTH_MM {
                    behind = true;
                    break;
                }
                projected.push(intrinsics.project(&cam).unwrap());
            }
            if behind {
                continue; // part straddles the camera plane; skip it
            }
            let hull = convex_hull(&projected);
            if hull.len() >= 3 {
                fill_convex(&hull, &mut silhouette);
            }
        }
    }

    Ok(SceneRender {
        silhouette,
        tools: outputs,
    })
}

/// Single-tool rendering. Errors with `ToolOutOfView` when nothing is
/// visible.
pub fn render(
    model: &ToolModel,
    joints: &JointState,
    t_e_b: &RigidTransform,
    t_b_c: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<(GrayImage, RenderOutput), RenderError> {
    let scene = [ToolPose {
        model,
        joints: *joints,
        t_e_b: *t_e_b,
    }];
    let mut rendered = render_scene(&scene, t_b_c, intrinsics)?;
    let out = rendered.tools.pop().expect("one tool in scene");
    if out.visible_count() == 0 {
        return Err(RenderError::ToolOutOfView { tool_idx: 0 });
    }
    Ok((rendered.silhouette, out))
}

/// Andrew's monotone chain over projected points.
fn convex_hull(points: &[Point2<f64>]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let n = pts.len();
    if n < 3 {
        return pts;
    }
    let cross = |o: &(f64, f64), a: &(f64, f64), b: &(f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * n);
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Scanline-fills a convex polygon into the silhouette mask.
fn fill_convex(hull: &[(f64, f64)], silhouette: &mut GrayImage) {
    let (w, h) = (silhouette.width as i64, silhouette.height as i64);
    let min_y = hull.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = hull.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let y_start = (min_y.ceil() as i64).max(0);
    let y_end = (max_y.floor() as i64).min(h - 1);

    for y in y_start..=y_end {
        let yf = y as f64;
        let mut x_left = f64::INFINITY;
        let mut x_right = f64::NEG_INFINITY;
        for i in 0..hull.len() {
            let (x0, y0) = hull[i];
            let (x1, y1) = hull[(i + 1) % hull.len()];
            let crosses = (y0 <= yf && y1 > yf) || (y1 <= yf && y0 > yf);
            if !crosses {
                continue;
            }
            let t = (yf - y0) / (y1 - y0);
            let x = x0 + t * (x1 - x0);
            x_left = x_left.min(x);
            x_right = x_right.max(x);
        }
        if x_left > x_right {
            continue;
        }
        let xs = (x_left.ceil() as i64).max(0);
        let xe = (x_right.floor() as i64).min(w - 1);
        if xs > xe {
            continue;
        }
        let row_off = y as usize * silhouette.width;
        for x in xs..=xe {
            silhouette.data[row_off + x as usize] = 255;
        }
    }
}
