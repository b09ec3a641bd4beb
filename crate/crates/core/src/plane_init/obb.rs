//! Minimum-area oriented bounding box of points projected onto a plane:
//! convex hull (monotone chain) + rotating calipers over hull edges.

use nalgebra::{Vector2, Vector3};

use crate::scene::gram_schmidt_frame;

use super::PlaneInitError;

/// Extent and in-plane axes of the minimum-area rectangle.
#[derive(Debug, Clone)]
pub struct ObbExtent {
    pub width: f64,
    pub height: f64,
    /// World-space axis along the width.
    pub axis_u: Vector3<f64>,
    /// World-space axis along the height (right-handed with the normal).
    pub axis_v: Vector3<f64>,
    /// Rectangle center in world space.
    pub center: Vector3<f64>,
}

/// Upper-then-lower monotone chain; returns hull vertices in CCW order.
pub fn convex_hull_2d(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    let n = pts.len();
    if n < 3 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * n);
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Minimum-area rectangle over hull-edge directions.
fn min_area_rect(hull: &[Vector2<f64>]) -> Option<(f64, f64, Vector2<f64>, Vector2<f64>)> {
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, f64, f64, Vector2<f64>, Vector2<f64>)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let e = b - a;
        let len = e.norm();
        if len < 1e-15 {
            continue;
        }
        let dir = e / len;
        let perp = Vector2::new(-dir.y, dir.x);
        let (mut s0, mut s1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut t0, mut t1) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in hull {
            let s = dir.dot(p);
            let t = perp.dot(p);
            s0 = s0.min(s);
            s1 = s1.max(s);
            t0 = t0.min(t);
            t1 = t1.max(t);
        }
        let area = (s1 - s0) * (t1 - t0);
        let replace = match &best {
            None => true,
            Some((ba, ..)) => area < *ba,
        };
        if replace {
            let center = dir * (0.5 * (s0 + s1)) + perp * (0.5 * (t0 + t1));
            best = Some((area, s1 - s0, t1 - t0, dir, center));
        }
    }
    best.map(|(_, w, h, dir, center)| (w, h, dir, center))
}

/// Project inliers onto the plane frame and compute the minimum-area OBB.
pub fn obb_extent(
    points: &[Vector3<f64>],
    normal: &Vector3<f64>,
    origin: &Vector3<f64>,
) -> Result<ObbExtent, PlaneInitError> {
    if points.len() < 3 {
        return Err(PlaneInitError::Degenerate(format!("{} inliers for OBB", points.len())));
    }
    let n = normal.normalize();
    let (a1, a2) = gram_schmidt_frame(&n);
    let pts2: Vec<Vector2<f64>> = points
        .iter()
        .map(|p| {
            let d = p - origin;
            Vector2::new(d.dot(&a1), d.dot(&a2))
        })
        .collect();
    let hull = convex_hull_2d(&pts2);
    let Some((w, h, dir, center2)) = min_area_rect(&hull) else {
        return Err(PlaneInitError::Degenerate("collinear inliers".into()));
    };
    if w <= 0.0 || h <= 0.0 {
        return Err(PlaneInitError::Degenerate("zero-area OBB".into()));
    }
    let axis_u = dir.x * a1 + dir.y * a2;
    let axis_v = n.cross(&axis_u);
    Ok(ObbExtent {
        width: w,
        height: h,
        axis_u,
        axis_v,
        center: origin + center2.x * a1 + center2.y * a2,
    })
}
