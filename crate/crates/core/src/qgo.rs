//! Quantized gradient orientations (QGO): contour features for part-based
//! template matching.
//!
//! Gradient orientations are folded to [0, 180) degrees (contrast-polarity
//! invariant) and quantized into 8 bins of 22.5 degrees. Each pixel of an
//! [`OrientationMap`] holds a bitmask of bins present in its neighbourhood
//! (orientation spreading), so matching tolerates small misalignments and a
//! template reduces to a list of (offset, bin) features scored by table
//! lookup.

use crate::geometry::NUM_KEYPOINTS;
use crate::img::{gaussian_blur_sigma1, sobel_gradients, GrayImage};
use crate::render::RenderOutput;
use std::sync::OnceLock;
use thiserror::Error;

pub const NUM_BINS: usize = 8;
pub const BIN_WIDTH_DEG: f64 = 180.0 / NUM_BINS as f64;

/// Default gradient-magnitude threshold (8-bit Sobel scale).
pub const DEFAULT_MAGNITUDE_THRESHOLD: f32 = 30.0;
/// Default orientation spreading radius in pixels.
pub const DEFAULT_SPREAD_RADIUS: usize = 3;
/// Feature-count bounds per template.
pub const MIN_FEATURES: usize = 8;
pub const MAX_FEATURES: usize = 64;
/// Greedy non-maximum-suppression radius for match candidates (Chebyshev).
pub const NMS_RADIUS: i64 = 4;
/// Minimum spacing between template features (Euclidean, px).
const FEATURE_SPACING: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QgoError {
    #[error("template for part {part_id} is degenerate: {features} contour features (< {MIN_FEATURES})")]
    DegenerateTemplate { part_id: usize, features: usize },
}

/// Quantized, spread orientation representation of one image.
#[derive(Debug, Clone)]
pub struct OrientationMap {
    pub width: usize,
    pub height: usize,
    /// Spread bin masks: bit b set iff bin b present in the neighbourhood.
    bins: Vec<u8>,
    /// Pre-spread masks: exactly one bit for pixels passing the magnitude
    /// threshold, zero otherwise.
    quantized: Vec<u8>,
    /// Normalized Sobel magnitude used for feature selection.
    magnitude: Vec<f32>,
}

impl OrientationMap {
    #[inline]
    pub fn mask(&self, x: usize, y: usize) -> u8 {
        self.bins[y * self.width + x]
    }

    #[inline]
    pub fn masks(&self) -> &[u8] {
        &self.bins
    }

    /// True when the pixel passed the gradient-magnitude threshold (before
    /// spreading).
    pub fn magnitude_pass(&self, x: usize, y: usize) -> bool {
        self.quantized[y * self.width + x] != 0
    }

    /// Builds a map directly from spread masks (tests and tooling). The
    /// pre-spread state is taken to equal the masks, with unit magnitudes.
    pub fn from_raw(width: usize, height: usize, bins: Vec<u8>) -> Self {
        assert_eq!(bins.len(), width * height);
        let magnitude = bins.iter().map(|&m| if m != 0 { 255.0 } else { 0.0 }).collect();
        Self {
            width,
            height,
            quantized: bins.clone(),
            bins,
            magnitude,
        }
    }

    /// One 0/255 image per orientation bin, for debugging.
    pub fn bin_layer(&self, bin: usize) -> GrayImage {
        let mut img = GrayImage::new(self.width, self.height);
        let bit = 1u8 << bin;
        for (dst, &m) in img.data.iter_mut().zip(self.bins.iter()) {
            if m & bit != 0 {
                *dst = 255;
            }
        }
        img
    }
}

/// Folds a gradient into [0, 180) degrees and quantizes it.
///
/// The gradient is canonicalized to the gy >= 0 half-plane first so that a
/// sign flip of the whole gradient (contrast inversion) lands in the same
/// bin bit-for-bit.
#[inline]
fn quantize_gradient(gx: f32, gy: f32) -> u8 {
    let (gx, gy) = if gy < 0.0 || (gy == 0.0 && gx < 0.0) {
        (-gx, -gy)
    } else {
        (gx, gy)
    };
    let angle = (gy as f64).atan2(gx as f64).to_degrees(); // in [0, 180]
    let bin = (angle / BIN_WIDTH_DEG) as usize;
    bin.min(NUM_BINS - 1) as u8
}

/// Computes the orientation map of a grayscale image: Gaussian blur
/// (sigma = 1), Sobel gradients, fold + quantize, magnitude threshold, then
/// OR-spreading into the (2r+1)^2 neighbourhood.
pub fn compute_orientation_map(
    image: &GrayImage,
    magnitude_threshold: f32,
    spread_radius: usize,
) -> OrientationMap {
    assert!(image.width > 0 && image.height > 0, "image must be nonempty");
    let blurred = gaussian_blur_sigma1(image);
    let (gx, gy) = sobel_gradients(&blurred);
    let (w, h) = (image.width, image.height);
    let mut quantized = vec![0u8; w * h];
    let mut magnitude = vec![0f32; w * h];
    for i in 0..w * h {
        let (dx, dy) = (gx.data[i], gy.data[i]);
        let mag = (dx * dx + dy * dy).sqrt();
        magnitude[i] = mag;
        if mag >= magnitude_threshold {
            quantized[i] = 1u8 << quantize_gradient(dx, dy);
        }
    }
    let bins = spread_masks(&quantized, w, h, spread_radius);
    OrientationMap {
        width: w,
        height: h,
        bins,
        quantized,
        magnitude,
    }
}

/// Separable OR-dilation over a (2r+1)^2 neighbourhood.
fn spread_masks(src: &[u8], w: usize, h: usize, r: usize) -> Vec<u8> {
    if r == 0 {
        return src.to_vec();
    }
    let mut horiz = vec![0u8; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut horiz[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut acc = 0u8;
            for &v in &row[lo..=hi] {
                acc |= v;
            }
            out[x] = acc;
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let mut acc = 0u8;
            for yy in lo..=hi {
                acc |= horiz[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// |cos| of the angular distance between two bins (bins are 22.5 deg apart,
/// orientations live mod 180 deg).
#[inline]
pub fn bin_similarity(a: usize, b: usize) -> f32 {
    let d = a.abs_diff(b);
    let d = d.min(NUM_BINS - d);
    ((d as f64 * std::f64::consts::FRAC_PI_8).cos().abs()) as f32
}

/// Response of a template bin against a spread mask: best |cos| over the set
/// bits, 0 for an empty mask. This is the scoring definition; the fast path
/// tabulates it over all 256 masks.
#[inline]
pub fn mask_response(bin: usize, mask: u8) -> f32 {
    let mut best = 0.0f32;
    let mut m = mask;
    while m != 0 {
        let b = m.trailing_zeros() as usize;
        let s = bin_similarity(bin, b);
        if s > best {
            best = s;
        }
        m &= m - 1;
    }
    best
}

fn response_table() -> &'static [[f32; 256]; NUM_BINS] {
    static TABLE: OnceLock<[[f32; 256]; NUM_BINS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [[0.0f32; 256]; NUM_BINS];
        for (bin, row) in table.iter_mut().enumerate() {
            for (mask, out) in row.iter_mut().enumerate() {
                *out = mask_response(bin, mask as u8);
            }
        }
        table
    })
}

/// One contour feature of a part template: an offset from the anchor and a
/// quantized orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateFeature {
    pub dx: i32,
    pub dy: i32,
    pub bin: u8,
}

/// Binary part template centred on a keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PartTemplate {
    pub part_id: usize,
    /// Box centre in the source image (rounded keypoint pixel).
    pub anchor: (i32, i32),
    /// Box side in pixels, from the depth-dependent sizing law.
    pub box_size: u32,
    pub features: Vec<TemplateFeature>,
    pub depth_at_extract: f64,
}

/// Depth-dependent box sizing: side = clamp(round(base * ref / depth), 16, 128).
pub fn box_side_for_depth(base_box: f64, reference_depth: f64, depth: f64) -> u32 {
    let side = (base_box * reference_depth / depth).round();
    side.clamp(16.0, 128.0) as u32
}

/// Extracts one template around a visible keypoint.
pub fn extract_template(
    part_id: usize,
    anchor_x: f64,
    anchor_y: f64,
    depth: f64,
    map: &OrientationMap,
    base_box: f64,
    reference_depth: f64,
) -> Result<PartTemplate, QgoError> {
    let side = box_side_for_depth(base_box, reference_depth, depth);
    let (ax, ay) = (anchor_x.round() as i32, anchor_y.round() as i32);
    let lo = -((side / 2) as i32);
    let hi = ((side - 1) / 2) as i32;

    // Candidate contour pixels sorted by magnitude (ties: row, then column).
    let mut cands: Vec<(f32, i32, i32, u8)> = Vec::new();
    for dy in lo..=hi {
        let y = ay + dy;
        if y < 0 || y as usize >= map.height {
            continue;
        }
        for dx in lo..=hi {
            let x = ax + dx;
            if x < 0 || x as usize >= map.width {
                continue;
            }
            let idx = y as usize * map.width + x as usize;
            let q = map.quantized[idx];
            if q != 0 {
                cands.push((map.magnitude[idx], dx, dy, q.trailing_zeros() as u8));
            }
        }
    }
    cands.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.2.cmp(&b.2))
            .then(a.1.cmp(&b.1))
    });

    let mut features: Vec<TemplateFeature> = Vec::new();
    let min_d2 = FEATURE_SPACING * FEATURE_SPACING;
    for &(_, dx, dy, bin) in &cands {
        if features.len() >= MAX_FEATURES {
            break;
        }
        let clash = features.iter().any(|f| {
            let ddx = (f.dx - dx) as f64;
            let ddy = (f.dy - dy) as f64;
            ddx * ddx + ddy * ddy < min_d2
        });
        if !clash {
            features.push(TemplateFeature { dx, dy, bin });
        }
    }

    if features.len() < MIN_FEATURES {
        return Err(QgoError::DegenerateTemplate {
            part_id,
            features: features.len(),
        });
    }
    Ok(PartTemplate {
        part_id,
        anchor: (ax, ay),
        box_size: side,
        features,
        depth_at_extract: depth,
    })
}

/// Extracts templates for all visible parts of a render. Contour-poor parts
/// are skipped and reported.
pub fn extract_part_templates(
    render: &RenderOutput,
    map: &OrientationMap,
    base_box: f64,
    reference_depth: f64,
) -> (Vec<PartTemplate>, Vec<QgoError>) {
    let mut templates = Vec::new();
    let mut skipped = Vec::new();
    for part_id in 0..NUM_KEYPOINTS {
        if !render.visibility[part_id] {
            continue;
        }
        let px = render.keypoints_2d[part_id];
        match extract_template(
            part_id,
            px.x,
            px.y,
            render.depths[part_id],
            map,
            base_box,
            reference_depth,
        ) {
            Ok(t) => templates.push(t),
            Err(e) => skipped.push(e),
        }
    }
    (templates, skipped)
}

/// Resamples a template at a different scale and in-plane rotation
/// (initialization search). Offsets are rotated/scaled and re-rounded;
/// orientations are rotated by the same angle and requantized.
pub fn transform_template(t: &PartTemplate, scale: f64, rotation_rad: f64) -> PartTemplate {
    let (s, c) = rotation_rad.sin_cos();
    let rot_deg = rotation_rad.to_degrees();
    let mut features: Vec<TemplateFeature> = Vec::with_capacity(t.features.len());
    for f in &t.features {
        let x = f.dx as f64;
        let y = f.dy as f64;
        let dx = (scale * (c * x - s * y)).round() as i32;
        let dy = (scale * (s * x + c * y)).round() as i32;
        if features.iter().any(|g| g.dx == dx && g.dy == dy) {
            continue;
        }
        let mut angle = (f.bin as f64 + 0.5) * BIN_WIDTH_DEG + rot_deg;
        angle = angle.rem_euclid(180.0);
        let bin = ((angle / BIN_WIDTH_DEG) as usize).min(NUM_BINS - 1) as u8;
        features.push(TemplateFeature { dx, dy, bin });
    }
    PartTemplate {
        part_id: t.part_id,
        anchor: t.anchor,
        box_size: ((t.box_size as f64 * scale).round() as u32).max(1),
        features,
        depth_at_extract: t.depth_at_extract,
    }
}

/// One sliding-window match: an anchor location with its similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCandidate {
    pub part_id: usize,
    pub x: i32,
    pub y: i32,
    /// Similarity in [0, 1].
    pub score: f64,
    /// 1-based rank within the part's candidate list.
    pub rank: usize,
}

/// Inclusive rectangle of anchor positions to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchRegion {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl SearchRegion {
    pub fn full(map: &OrientationMap) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: map.width as i32 - 1,
            y1: map.height as i32 - 1,
        }
    }

    /// Window of +-radius around a predicted anchor, clamped to the image.
    pub fn around(cx: f64, cy: f64, radius: i32, map: &OrientationMap) -> Self {
        let x = cx.round() as i32;
        let y = cy.round() as i32;
        Self {
            x0: (x - radius).clamp(0, map.width as i32 - 1),
            y0: (y - radius).clamp(0, map.height as i32 - 1),
            x1: (x + radius).clamp(0, map.width as i32 - 1),
            y1: (y + radius).clamp(0, map.height as i32 - 1),
        }
    }

    pub fn width(&self) -> usize {
        (self.x1 - self.x0 + 1).max(0) as usize
    }

    pub fn height(&self) -> usize {
        (self.y1 - self.y0 + 1).max(0) as usize
    }

    fn assert_inside(&self, map: &OrientationMap) {
        assert!(
            self.x0 >= 0
                && self.y0 >= 0
                && self.x0 <= self.x1
                && self.y0 <= self.y1
                && (self.x1 as usize) < map.width
                && (self.y1 as usize) < map.height,
            "search region {self:?} outside {}x{} map",
            map.width,
            map.height
        );
    }
}

/// Reference scorer: per pixel, the best |cos| over set mask bits computed
/// directly. Offsets falling outside the image contribute zero.
fn score_at_reference(t: &PartTemplate, map: &OrientationMap, x: i32, y: i32) -> f64 {
    let mut sum = 0.0f64;
    for f in &t.features {
        let fx = x + f.dx;
        let fy = y + f.dy;
        if (fx as usize) < map.width && (fy as usize) < map.height {
            let mask = map.bins[fy as usize * map.width + fx as usize];
            sum += mask_response(f.bin as usize, mask) as f64;
        }
    }
    sum / t.features.len() as f64
}

/// Optimized scorer: per-bin lookup tables over the 256 possible masks,
/// gathered from the linear mask buffer.
fn score_at_fast(
    t: &PartTemplate,
    map: &OrientationMap,
    table: &[[f32; 256]; NUM_BINS],
    x: i32,
    y: i32,
) -> f64 {
    let mut sum = 0.0f64;
    let w = map.width;
    let h = map.height;
    let bins = &map.bins;
    for f in &t.features {
        let fx = (x + f.dx) as usize;
        let fy = (y + f.dy) as usize;
        if fx < w && fy < h {
            let mask = unsafe { *bins.get_unchecked(fy * w + fx) };
            sum += table[f.bin as usize][mask as usize] as f64;
        }
    }
    sum / t.features.len() as f64
}

/// Greedy NMS over a dense score grid: repeatedly take the best remaining
/// score (ties: smaller row, then smaller column) and suppress a Chebyshev
/// neighbourhood of [`NMS_RADIUS`].
fn top_k_candidates(
    part_id: usize,
    scores: &mut [f64],
    region: &SearchRegion,
    k: usize,
) -> Vec<MatchCandidate> {
    let w = region.width();
    let h = region.height();
    let mut out = Vec::with_capacity(k);
    for rank in 1..=k {
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = usize::MAX;
        for (idx, &s) in scores.iter().enumerate() {
            if s > best {
                best = s;
                best_idx = idx;
            }
        }
        if best_idx == usize::MAX || best == f64::NEG_INFINITY {
            break;
        }
        let by = best_idx / w;
        let bx = best_idx % w;
        out.push(MatchCandidate {
            part_id,
            x: region.x0 + bx as i32,
            y: region.y0 + by as i32,
            score: best,
            rank,
        });
        let y_lo = by.saturating_sub(NMS_RADIUS as usize);
        let y_hi = (by + NMS_RADIUS as usize).min(h - 1);
        let x_lo = bx.saturating_sub(NMS_RADIUS as usize);
        let x_hi = (bx + NMS_RADIUS as usize).min(w - 1);
        for yy in y_lo..=y_hi {
            for xx in x_lo..=x_hi {
                scores[yy * w + xx] = f64::NEG_INFINITY;
            }
        }
    }
    out
}

/// Sliding-window matching with the reference scorer. Returns the top-k
/// suppressed local maxima in descending score order.
pub fn match_template(
    t: &PartTemplate,
    map: &OrientationMap,
    region: &SearchRegion,
    k: usize,
) -> Vec<MatchCandidate> {
    assert!(k >= 1);
    region.assert_inside(map);
    let w = region.width();
    let h = region.height();
    let mut scores = vec![0.0f64; w * h];
    for (row, chunk) in scores.chunks_mut(w).enumerate() {
        let y = region.y0 + row as i32;
        for (col, out) in chunk.iter_mut().enumerate() {
            *out = score_at_reference(t, map, region.x0 + col as i32, y);
        }
    }
    top_k_candidates(t.part_id, &mut scores, region, k)
}

/// Optimized matching path. Produces results identical to
/// [`match_template`] bit for bit.
pub fn binarize_and_score_fast(
    t: &PartTemplate,
    map: &OrientationMap,
    region: &SearchRegion,
    k: usize,
) -> Vec<MatchCandidate> {
    assert!(k >= 1);
    region.assert_inside(map);
    let table = response_table();
    let w = region.width();
    let h = region.height();
    let mut scores = vec![0.0f64; w * h];
    for (row, chunk) in scores.chunks_mut(w).enumerate() {
        let y = region.y0 + row as i32;
        for (col, out) in chunk.iter_mut().enumerate() {
            *out = score_at_fast(t, map, table, region.x0 + col as i32, y);
        }
    }
    top_k_candidates(t.part_id, &mut scores, region, k)
}

/// Approximate full-image search used at initialization: a stride-4 coarse
/// scan followed by exact rescoring around the best coarse peaks. Every
/// returned score is an exact sliding-window score; only peaks that never
/// stand out at the coarse level can be missed.
pub fn match_template_coarse(
    t: &PartTemplate,
    map: &OrientationMap,
    region: &SearchRegion,
    k: usize,
) -> Vec<MatchCandidate> {
    const STRIDE: i32 = 4;
    const COARSE_KEEP: usize = 24;
    assert!(k >= 1);
    region.assert_inside(map);
    let table = response_table();

    let mut coarse: Vec<(f64, i32, i32)> = Vec::new();
    let mut y = region.y0;
    while y <= region.y1 {
        let mut x = region.x0;
        while x <= region.x1 {
            coarse.push((score_at_fast(t, map, table, x, y), x, y));
            x += STRIDE;
        }
        y += STRIDE;
    }
    coarse.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    coarse.truncate(COARSE_KEEP);

    // Exact rescoring in a window around each coarse peak; dedup positions.
    let mut seen: Vec<(i32, i32)> = Vec::new();
    let mut refined: Vec<(f64, i32, i32)> = Vec::new();
    for &(_, cx, cy) in &coarse {
        for dy in -STRIDE..=STRIDE {
            let yy = cy + dy;
            if yy < region.y0 || yy > region.y1 {
                continue;
            }
            for dx in -STRIDE..=STRIDE {
                let xx = cx + dx;
                if xx < region.x0 || xx > region.x1 || seen.contains(&(xx, yy)) {
                    continue;
                }
                seen.push((xx, yy));
                refined.push((score_at_fast(t, map, table, xx, yy), xx, yy));
            }
        }
    }
    refined.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    // Greedy NMS over the sparse refined set.
    let mut out: Vec<MatchCandidate> = Vec::with_capacity(k);
    for &(score, x, y) in &refined {
        if out.len() >= k {
            break;
        }
        let suppressed = out
            .iter()
            .any(|c| (c.x - x).abs() as i64 <= NMS_RADIUS && (c.y - y).abs() as i64 <= NMS_RADIUS);
        if !suppressed {
            let rank = out.len() + 1;
            out.push(MatchCandidate {
                part_id: t.part_id,
                x,
                y,
                score,
                rank,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step_edge_image(vertical: bool, invert: bool) -> GrayImage {
        let mut img = GrayImage::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let bright = if vertical { x >= 16 } else { y >= 16 };
                let v = if bright != invert { 255 } else { 0 };
                img.set(x, y, v);
            }
        }
        img
    }

    #[test]
    fn vertical_edge_quantizes_to_bin_0() {
        let map = compute_orientation_map(&step_edge_image(true, false), 30.0, 0);
        // Gradient along +x => angle 0 => bin 0, along the edge column.
        assert_eq!(map.mask(16, 16), 1 << 0);
        assert!(map.magnitude_pass(16, 16));
    }

    #[test]
    fn horizontal_edge_quantizes_to_bin_4() {
        let map = compute_orientation_map(&step_edge_image(false, false), 30.0, 0);
        // Gradient along +y => 90 deg => floor(90 / 22.5) = 4.
        assert_eq!(map.mask(16, 16), 1 << 4);
    }

    #[test]
    fn inverted_contrast_edge_same_bin() {
        let map = compute_orientation_map(&step_edge_image(true, true), 30.0, 0);
        assert_eq!(map.mask(16, 16), 1 << 0);
    }

    #[test]
    fn spreading_ors_neighbourhood() {
        let mut bins = vec![0u8; 25];
        bins[12] = 1 << 3; // centre of 5x5
        let spread = spread_masks(&bins, 5, 5, 1);
        for y in 1..4 {
            for x in 1..4 {
                assert_eq!(spread[y * 5 + x], 1 << 3);
            }
        }
        assert_eq!(spread[0], 0);
    }

    #[test]
    fn box_sizing_law() {
        assert_eq!(box_side_for_depth(40.0, 100.0, 100.0), 40);
        assert_eq!(box_side_for_depth(40.0, 100.0, 200.0), 20);
        assert_eq!(box_side_for_depth(40.0, 100.0, 1000.0), 16); // clamped low
        assert_eq!(box_side_for_depth(40.0, 100.0, 10.0), 128); // clamped high
    }

    #[test]
    fn blank_region_is_degenerate() {
        let img = GrayImage::filled(64, 64, 128);
        let map = compute_orientation_map(&img, 30.0, 3);
        let err = extract_template(3, 32.0, 32.0, 100.0, &map, 40.0, 100.0).unwrap_err();
        assert!(matches!(err, QgoError::DegenerateTemplate { part_id: 3, .. }));
    }

    fn disk_image(cx: f64, cy: f64, r: f64) -> GrayImage {
        let mut img = GrayImage::new(96, 96);
        for y in 0..96 {
            for x in 0..96 {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d < r {
                    img.set(x, y, 230);
                }
            }
        }
        img
    }

    #[test]
    fn self_match_scores_one_at_anchor() {
        // Without spreading the perfect score is unique to the anchor.
        let img = disk_image(48.0, 48.0, 14.0);
        let map = compute_orientation_map(&img, 30.0, 0);
        let t = extract_template(0, 48.0, 48.0, 100.0, &map, 40.0, 100.0).unwrap();
        let cands = match_template(&t, &map, &SearchRegion::full(&map), 3);
        assert_eq!(cands[0].rank, 1);
        assert_eq!(cands[0].score, 1.0);
        assert_eq!((cands[0].x, cands[0].y), t.anchor);

        // With spreading the anchor still scores a perfect 1.0 and the
        // rank-1 candidate shares that score (a spread-radius plateau).
        let spread = compute_orientation_map(&img, 30.0, 3);
        let t2 = extract_template(0, 48.0, 48.0, 100.0, &spread, 40.0, 100.0).unwrap();
        let cands2 = match_template(&t2, &spread, &SearchRegion::full(&spread), 1);
        assert_eq!(cands2[0].score, 1.0);
        let anchor_only = SearchRegion {
            x0: t2.anchor.0,
            y0: t2.anchor.1,
            x1: t2.anchor.0,
            y1: t2.anchor.1,
        };
        let at_anchor = match_template(&t2, &spread, &anchor_only, 1);
        assert_eq!(at_anchor[0].score, 1.0);
    }

    #[test]
    fn empty_map_scores_zero() {
        let map = OrientationMap::from_raw(32, 32, vec![0u8; 32 * 32]);
        let t = PartTemplate {
            part_id: 0,
            anchor: (16, 16),
            box_size: 16,
            features: vec![
                TemplateFeature { dx: 0, dy: 0, bin: 0 },
                TemplateFeature { dx: 3, dy: -2, bin: 5 },
            ],
            depth_at_extract: 100.0,
        };
        let cands = match_template(&t, &map, &SearchRegion::full(&map), 2);
        assert!(cands.iter().all(|c| c.score == 0.0));
    }

    fn random_map(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> OrientationMap {
        let bins: Vec<u8> = (0..w * h)
            .map(|_| {
                if rng.random_bool(density) {
                    rng.random_range(1..=255) as u8
                } else {
                    0
                }
            })
            .collect();
        OrientationMap::from_raw(w, h, bins)
    }

    fn random_template(rng: &mut impl Rng, part_id: usize) -> PartTemplate {
        let n = rng.random_range(MIN_FEATURES..=24);
        let mut features = Vec::new();
        while features.len() < n {
            let f = TemplateFeature {
                dx: rng.random_range(-8..=8),
                dy: rng.random_range(-8..=8),
                bin: rng.random_range(0..8) as u8,
            };
            if !features.iter().any(|g: &TemplateFeature| g.dx == f.dx && g.dy == f.dy) {
                features.push(f);
            }
        }
        PartTemplate {
            part_id,
            anchor: (0, 0),
            box_size: 17,
            features,
            depth_at_extract: 100.0,
        }
    }

    #[test]
    fn fast_path_equals_reference_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let map = random_map(&mut rng, 64, 64, 0.3);
            let t = random_template(&mut rng, 1);
            let region = SearchRegion::full(&map);
            let a = match_template(&t, &map, &region, 5);
            let b = binarize_and_score_fast(&t, &map, &region, 5);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shifted_map_shifts_rank_one_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Structured content in the middle of a quiet map.
        let mut bins = vec![0u8; 128 * 128];
        for _ in 0..60 {
            let x = rng.random_range(40..70);
            let y = rng.random_range(40..70);
            bins[y * 128 + x] = 1u8 << rng.random_range(0..8);
        }
        let base = OrientationMap::from_raw(128, 128, bins.clone());
        let (sx, sy) = (7i32, -3i32);
        let mut shifted_bins = vec![0u8; 128 * 128];
        for y in 0..128i32 {
            for x in 0..128i32 {
                let (ox, oy) = (x - sx, y - sy);
                if (0..128).contains(&ox) && (0..128).contains(&oy) {
                    shifted_bins[(y * 128 + x) as usize] = bins[(oy * 128 + ox) as usize];
                }
            }
        }
        let shifted = OrientationMap::from_raw(128, 128, shifted_bins);

        // Template sampled from the structured area of the base map.
        let t = extract_template(0, 55.0, 55.0, 100.0, &base, 60.0, 100.0).unwrap();
        let region = SearchRegion::full(&base);
        let on_base = match_template(&t, &base, &region, 1);
        let on_shifted = match_template(&t, &shifted, &region, 1);
        assert_eq!(on_shifted[0].x - on_base[0].x, sx);
        assert_eq!(on_shifted[0].y - on_base[0].y, sy);

        // Brute-force oracle: the best score on the shifted map is at the
        // shifted anchor.
        assert_eq!(on_shifted[0].score, on_base[0].score);
    }

    #[test]
    fn score_monotone_under_map_feature_deletion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let map = random_map(&mut rng, 48, 48, 0.5);
        let t = random_template(&mut rng, 2);
        let score_full = score_at_reference(&t, &map, 24, 24);
        let mut thinned_bins = map.masks().to_vec();
        for m in thinned_bins.iter_mut() {
            if rng.random_bool(0.5) {
                *m = 0;
            }
        }
        let thinned = OrientationMap::from_raw(48, 48, thinned_bins);
        let score_thinned = score_at_reference(&t, &thinned, 24, 24);
        assert!(score_thinned <= score_full);
    }

    #[test]
    fn contrast_inversion_preserves_scores() {
        // Orientations are folded to [0, 180), so inverting the image keeps
        // every bin. Pixels whose blurred gradient magnitude sits within
        // float noise of the threshold can flip in or out, so the comparison
        // is made away from the threshold and scores get a small tolerance.
        let img = disk_image(40.0, 52.0, 17.0);
        let mut inverted = img.clone();
        for v in inverted.data.iter_mut() {
            *v = 255 - *v;
        }
        let map_a = compute_orientation_map(&img, 30.0, 3);
        let map_b = compute_orientation_map(&inverted, 30.0, 3);

        // Bin-level invariance on safely-above-threshold pixels.
        for y in 0..96 {
            for x in 0..96 {
                let idx = y * 96 + x;
                if map_a.magnitude[idx] > 40.0 && map_b.magnitude[idx] > 40.0 {
                    assert_eq!(
                        map_a.quantized[idx], map_b.quantized[idx],
                        "bin flip at ({x},{y})"
                    );
                }
            }
        }

        let t = extract_template(0, 40.0, 52.0, 100.0, &map_a, 40.0, 100.0).unwrap();
        let region = SearchRegion::full(&map_a);
        let a = match_template(&t, &map_a, &region, 1);
        let b = match_template(&t, &map_b, &region, 1);
        assert_eq!((a[0].x, a[0].y), (b[0].x, b[0].y));
        assert!((a[0].score - b[0].score).abs() < 0.02, "{} vs {}", a[0].score, b[0].score);
    }

    #[test]
    fn coarse_search_finds_strong_peak() {
        let img = disk_image(70.0, 30.0, 12.0);
        let map = compute_orientation_map(&img, 30.0, 3);
        let t = extract_template(0, 70.0, 30.0, 100.0, &map, 40.0, 100.0).unwrap();
        let region = SearchRegion::full(&map);
        let exact = binarize_and_score_fast(&t, &map, &region, 1);
        let coarse = match_template_coarse(&t, &map, &region, 1);
        assert_eq!((exact[0].x, exact[0].y), (coarse[0].x, coarse[0].y));
        assert_eq!(exact[0].score, coarse[0].score);
    }

    #[test]
    fn transform_template_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_template(&mut rng, 0);
        let t2 = transform_template(&t, 1.0, 0.0);
        assert_eq!(t.features, t2.features);
    }

    #[test]
    fn transform_template_rotates_bins() {
        let t = PartTemplate {
            part_id: 0,
            anchor: (0, 0),
            box_size: 16,
            features: vec![TemplateFeature { dx: 10, dy: 0, bin: 0 }],
            depth_at_extract: 100.0,
        };
        // 90 degree rotation: offset (10,0) -> (0,10), bin 0 -> bin 4.
        let r = transform_template(&t, 1.0, std::f64::consts::FRAC_PI_2);
        assert_eq!(r.features[0].dx, 0);
        assert_eq!(r.features[0].dy, 10);
        assert_eq!(r.features[0].bin, 4);
    }
}
