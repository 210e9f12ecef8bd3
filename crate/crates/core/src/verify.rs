//! Outlier rejection for part matches via 2D geometrical context.
//!
//! A pair of correspondences anchors two polar grids, one on the virtual
//! view and one on the camera image (shared origin/axis/scale convention).
//! A part is consistent when its detection falls in the same grid zone as
//! its virtual keypoint. Hypothesis pairs are drawn in descending match
//! quality (progressive sample consensus) until enough parts agree.

use crate::qgo::MatchCandidate;
use nalgebra::{Point2, Vector2};
use thiserror::Error;

pub const DEFAULT_ANGULAR_BIN_DEG: f64 = 30.0;
pub const DEFAULT_RADIAL_BIN_PX: f64 = 10.0;
pub const DEFAULT_INLIER_THRESHOLD: usize = 4;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

/// Samples whose anchor pair is closer than this (px) are degenerate.
pub const MIN_PAIR_DISTANCE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("degenerate sample: anchor pair distance {distance} px below {MIN_PAIR_DISTANCE}")]
    DegenerateSample { distance: f64 },
    #[error("invalid polar grid: {0}")]
    InvalidGrid(String),
}

/// A polar grid anchored at `origin`, zero angle along `axis`, radial bins
/// stretched by `scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarGridSpec {
    pub angular_bin_deg: f64,
    pub radial_bin_px: f64,
    pub origin: Point2<f64>,
    pub axis: Vector2<f64>,
    pub scale: f64,
}

impl PolarGridSpec {
    pub fn new(
        angular_bin_deg: f64,
        radial_bin_px: f64,
        origin: Point2<f64>,
        axis: Vector2<f64>,
        scale: f64,
    ) -> Result<Self, VerifyError> {
        if angular_bin_deg <= 0.0 || (360.0 / angular_bin_deg).fract().abs() > 1e-9 {
            return Err(VerifyError::InvalidGrid(format!(
                "angular bin {angular_bin_deg} deg must divide 360"
            )));
        }
        if radial_bin_px <= 0.0 {
            return Err(VerifyError::InvalidGrid(format!(
                "radial bin {radial_bin_px} px must be positive"
            )));
        }
        let norm = axis.norm();
        if !(norm > 0.0) {
            return Err(VerifyError::InvalidGrid("zero axis".into()));
        }
        if !(scale > 0.0) {
            return Err(VerifyError::InvalidGrid(format!("scale {scale} must be positive")));
        }
        Ok(Self {
            angular_bin_deg,
            radial_bin_px,
            origin,
            axis: axis / norm,
            scale,
        })
    }

    pub fn angular_bins(&self) -> u32 {
        (360.0 / self.angular_bin_deg).round() as u32
    }
}

/// Zone of a point: (angular index, radial index). The origin itself maps to
/// zone (0, 0) by convention.
pub fn zone_of(point: Point2<f64>, grid: &PolarGridSpec) -> (u32, u32) {
    let v = point - grid.origin;
    let d = v.norm();
    if d == 0.0 {
        return (0, 0);
    }
    let radial = (d / (grid.radial_bin_px * grid.scale)).floor() as u32;
    let cross = grid.axis.x * v.y - grid.axis.y * v.x;
    let dot = grid.axis.x * v.x + grid.axis.y * v.y;
    let mut angle = cross.atan2(dot).to_degrees();
    if angle < 0.0 {
        angle += 360.0;
    }
    let angular = ((angle / grid.angular_bin_deg) as u32).min(grid.angular_bins() - 1);
    (angular, radial)
}

/// Scale ratio between the real and virtual anchor pairs.
pub fn scale_between(
    virtual_pair: (Point2<f64>, Point2<f64>),
    real_pair: (Point2<f64>, Point2<f64>),
) -> Result<f64, VerifyError> {
    let dv = (virtual_pair.1 - virtual_pair.0).norm();
    if dv < MIN_PAIR_DISTANCE {
        return Err(VerifyError::DegenerateSample { distance: dv });
    }
    let dr = (real_pair.1 - real_pair.0).norm();
    Ok(dr / dv)
}

/// Candidate pool of one part entering verification. Candidates must be
/// sorted by descending score.
#[derive(Debug, Clone)]
pub struct PartMatches {
    pub part_id: usize,
    /// Projected keypoint in the virtual view.
    pub virtual_point: Point2<f64>,
    pub candidates: Vec<MatchCandidate>,
}

#[derive(Debug, Clone)]
pub struct VerificationResult {
    /// Chosen candidate per inlier part (at most one per part).
    pub inliers: Vec<(usize, MatchCandidate)>,
    pub iterations_used: usize,
    pub success: bool,
    /// Grids of the winning (or best) sample, for post-hoc re-checks.
    pub grids: Option<(PolarGridSpec, PolarGridSpec)>,
}

/// Verifies the geometrical context of candidate matches.
///
/// Hypotheses are two-part anchor pairs enumerated part-pair-first by the
/// product of the pair's best candidate scores (descending), and within a
/// pair by ascending rank sum. Each hypothesis consumes one iteration; the
/// first one reaching `inlier_threshold` inliers wins. Degenerate samples
/// (anchor pairs closer than [`MIN_PAIR_DISTANCE`]) are skipped but still
/// consume their iteration.
pub fn verify_context(
    parts: &[PartMatches],
    angular_bin_deg: f64,
    radial_bin_px: f64,
    inlier_threshold: usize,
    max_iterations: usize,
) -> VerificationResult {
    let usable: Vec<&PartMatches> = parts.iter().filter(|p| !p.candidates.is_empty()).collect();
    let mut best = VerificationResult {
        inliers: Vec::new(),
        iterations_used: 0,
        success: false,
        grids: None,
    };
    if usable.len() < 2 {
        return best;
    }

    // Part pairs ordered by the product of best candidate scores.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..usable.len() {
        for j in (i + 1)..usable.len() {
            pairs.push((i, j));
        }
    }
    pairs.sort_by(|&(a1, a2), &(b1, b2)| {
        let pa = usable[a1].candidates[0].score * usable[a2].candidates[0].score;
        let pb = usable[b1].candidates[0].score * usable[b2].candidates[0].score;
        pb.partial_cmp(&pa)
            .unwrap()
            .then(usable[a1].part_id.cmp(&usable[b1].part_id))
            .then(usable[a2].part_id.cmp(&usable[b2].part_id))
    });

    let mut iterations = 0usize;
    'outer: for &(ia, ib) in &pairs {
        let pa = usable[ia];
        let pb = usable[ib];
        // Rank combinations in ascending rank sum (then rank of the first).
        let mut combos: Vec<(usize, usize)> = Vec::new();
        for ra in 0..pa.candidates.len() {
            for rb in 0..pb.candidates.len() {
                combos.push((ra, rb));
            }
        }
        combos.sort_by_key(|&(ra, rb)| (ra + rb, ra));

        for (ra, rb) in combos {
            if iterations >= max_iterations {
                break 'outer;
            }
            iterations += 1;

            let v_origin = pa.virtual_point;
            let v_target = pb.virtual_point;
            let ca = &pa.candidates[ra];
            let cb = &pb.candidates[rb];
            let r_origin = Point2::new(ca.x as f64, ca.y as f64);
            let r_target = Point2::new(cb.x as f64, cb.y as f64);

            let dv = (v_target - v_origin).norm();
            let dr = (r_target - r_origin).norm();
            if dv < MIN_PAIR_DISTANCE || dr < MIN_PAIR_DISTANCE {
                continue; // degenerate sample, iteration consumed
            }
            let scale = dr / dv;
            let v_grid = PolarGridSpec {
                angular_bin_deg,
                radial_bin_px,
                origin: v_origin,
                axis: (v_target - v_origin) / dv,
                scale: 1.0,
            };
            let r_grid = PolarGridSpec {
                angular_bin_deg,
                radial_bin_px,
                origin: r_origin,
                axis: (r_target - r_origin) / dr,
                scale,
            };

            let mut inliers: Vec<(usize, MatchCandidate)> = Vec::new();
            for part in &usable {
                let zv = zone_of(part.virtual_point, &v_grid);
                // Best-scoring zone-consistent candidate (pools are sorted).
                let chosen = part.candidates.iter().find(|c| {
                    zone_of(Point2::new(c.x as f64, c.y as f64), &r_grid) == zv
                });
                if let Some(c) = chosen {
                    inliers.push((part.part_id, *c));
                }
            }

            if inliers.len() >= inlier_threshold {
                return VerificationResult {
                    inliers,
                    iterations_used: iterations,
                    success: true,
                    grids: Some((v_grid, r_grid)),
                };
            }
            if inliers.len() > best.inliers.len() {
                best.inliers = inliers;
                best.grids = Some((v_grid, r_grid));
            }
        }
    }
    best.iterations_used = iterations;
    best
}
