use super::boxes::{Box2D, Box3D};
use super::rotation::ROTATION_TOL;
use crate::error::{Error, Result};

/// Sign tolerance for the half-plane test in polygon clipping.
pub const CLIP_EPS: f64 = 1e-12;

pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segment_line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = [q[0] - p[0], q[1] - p[1]];
    let db = [b[0] - a[0], b[1] - a[1]];
    let denom = dp[0] * db[1] - dp[1] * db[0];
    if denom.abs() < f64::MIN_POSITIVE {
        return p;
    }
    let t = ((a[0] - p[0]) * db[1] - (a[1] - p[1]) * db[0]) / denom;
    [p[0] + t * dp[0], p[1] + t * dp[1]]
}

/// Sutherland–Hodgman clipping of `subject` against the convex,
/// counter-clockwise polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= -CLIP_EPS;
            let prev_in = cross(a, b, prev) >= -CLIP_EPS;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        twice += p[0] * q[1] - q[0] * p[1];
    }
    twice / 2.0
}

fn require_yaw_only(b: &Box3D) -> Result<()> {
    if b.rotation.is_yaw_only(ROTATION_TOL) {
        Ok(())
    } else {
        Err(Error::NotYawOnly)
    }
}

/// Intersection area of the two bird's-eye-view footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> Result<f64> {
    require_yaw_only(a)?;
    require_yaw_only(b)?;
    let clipped = clip_convex(&a.bev_polygon(), &b.bev_polygon());
    Ok(polygon_area(&clipped).max(0.0))
}

/// Bird's-eye-view IoU of two yaw-only boxes.
pub fn rotated_iou_bev(a: &Box3D, b: &Box3D) -> Result<f64> {
    let inter = bev_intersection_area(a, b)?;
    let area_a = a.dims.l * a.dims.w;
    let area_b = b.dims.l * b.dims.w;
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Volumetric IoU of two yaw-only boxes: BEV intersection times vertical
/// overlap over the union volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> Result<f64> {
    let inter_area = bev_intersection_area(a, b)?;
    let (a_lo, a_hi) = a.vertical_extent();
    let (b_lo, b_hi) = b.vertical_extent();
    let overlap_h = (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0);
    let inter = inter_area * overlap_h;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}
