//! Plane-relative math: mirroring, hit masks, Schlick reflection strength
//! and transmission/reflection composition.

mod render;

pub use render::{
    mirror_gaussians, render_view, render_view_backward, BackwardResult, MirroredGaussian, MirroredGaussianSet,
    PlaneRender, RenderOptions, ViewRender, ViewUpstream,
};

use nalgebra::{Matrix3, Vector3};

use crate::scene::{Camera, ImageBuffer, ReflectionPlane};

/// Distance below which a point counts as lying on the plane and is not
/// mirrored.
pub const ON_PLANE_EPS: f64 = 1e-9;

/// Householder reflection matrix `I - 2 n n^T` for a unit normal.
pub fn reflection_matrix(n: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() - 2.0 * n * n.transpose()
}

/// Mirror a point across the plane: `p - 2 ((p - u_p) . n) n`.
pub fn mirror_point(p: &Vector3<f64>, plane: &ReflectionPlane) -> Vector3<f64> {
    let n = plane.unit_normal();
    p - 2.0 * (p - plane.center).dot(&n) * n
}

/// Mirror a direction (no offset): `d - 2 (d . n) n`.
pub fn mirror_dir(d: &Vector3<f64>, n_unit: &Vector3<f64>) -> Vector3<f64> {
    d - 2.0 * d.dot(n_unit) * n_unit
}

/// Mirror a rotation matrix: reflect each column as a direction, then negate
/// the first column so the axes stay right-handed (det = +1).
pub fn mirror_rotation(r: &Matrix3<f64>, plane: &ReflectionPlane) -> Matrix3<f64> {
    let n = plane.unit_normal();
    let c0 = mirror_dir(&r.column(0).into(), &n);
    let c1 = mirror_dir(&r.column(1).into(), &n);
    let c2 = mirror_dir(&r.column(2).into(), &n);
    Matrix3::from_columns(&[-c0, c1, c2])
}

/// Binary hit mask: 1 where the pixel ray strikes the plane rectangle at
/// positive depth.
pub fn hit_mask(plane: &ReflectionPlane, cam: &Camera) -> ImageBuffer {
    let mut out = ImageBuffer::new(cam.width, cam.height, 1);
    let n = plane.unit_normal();
    let (ax_u, ax_v) = plane.axes();
    let origin = cam.center();
    let to_plane = (plane.center - origin).dot(&n);
    for iy in 0..cam.height {
        for ix in 0..cam.width {
            let d = cam.pixel_ray(ix, iy);
            let denom = d.dot(&n);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = to_plane / denom;
            if t <= 1e-9 {
                continue;
            }
            let hit = origin + t * d - plane.center;
            if hit.dot(&ax_u).abs() <= 0.5 * plane.width && hit.dot(&ax_v).abs() <= 0.5 * plane.height {
                out.set(ix, iy, 0, 1.0);
            }
        }
    }
    out
}

/// Schlick-Fresnel raw reflection strength on hit pixels:
/// `R0 + (1 - R0)(1 - |n . d|)^5`, zero elsewhere.
///
/// The incidence cosine uses the absolute value so the strength does not
/// depend on which way the optimizer happens to orient the normal.
pub fn schlick_strength(plane: &ReflectionPlane, cam: &Camera, hit: &ImageBuffer) -> ImageBuffer {
    let mut out = ImageBuffer::new(cam.width, cam.height, 1);
    let n = plane.unit_normal();
    let r0 = plane.r0();
    for iy in 0..cam.height {
        for ix in 0..cam.width {
            if hit.get(ix, iy, 0) == 0.0 {
                continue;
            }
            let d = cam.pixel_ray(ix, iy);
            let cos = d.dot(&n).abs().min(1.0);
            let f = 1.0 - cos;
            out.set(ix, iy, 0, r0 + (1.0 - r0) * f * f * f * f * f);
        }
    }
    out
}

/// Adjoint of [`schlick_strength`]: gradients w.r.t. the raw normal and the
/// R0 logit from a per-pixel upstream gradient.
pub fn schlick_strength_backward(
    plane: &ReflectionPlane,
    cam: &Camera,
    hit: &ImageBuffer,
    d_strength: &ImageBuffer,
) -> (Vector3<f64>, f64) {
    let n_raw = plane.normal;
    let n = plane.unit_normal();
    let r0 = plane.r0();
    let mut d_unit = Vector3::zeros();
    let mut d_r0 = 0.0f64;
    for iy in 0..cam.height {
        for ix in 0..cam.width {
            if hit.get(ix, iy, 0) == 0.0 {
                continue;
            }
            let g = d_strength.get(ix, iy, 0);
            if g == 0.0 {
                continue;
            }
            let d = cam.pixel_ray(ix, iy);
            let dot = d.dot(&n);
            let cos = dot.abs().min(1.0);
            let f = 1.0 - cos;
            let f4 = f * f * f * f;
            d_r0 += g * (1.0 - f4 * f);
            // dR/dcos = -5 (1 - R0) f^4; dcos/dn = sign(dot) d (before the
            // normalization chain).
            if cos < 1.0 {
                d_unit += g * (-5.0 * (1.0 - r0) * f4) * dot.signum() * d;
            }
        }
    }
    let d_normal = crate::scene::normalize_backward(&n_raw, &d_unit);
    let d_r0_logit = d_r0 * r0 * (1.0 - r0);
    (d_normal, d_r0_logit)
}

/// Reflection strength: elementwise `R_raw * M`, clamped to [0, 1].
pub fn reflection_strength(strength_raw: &ImageBuffer, mask: &ImageBuffer) -> ImageBuffer {
    assert!(strength_raw.same_shape(mask));
    let mut out = strength_raw.clone();
    for (o, m) in out.data.iter_mut().zip(mask.data.iter()) {
        *o = (*o * m).clamp(0.0, 1.0);
    }
    out
}

/// Final composition `C = (1 - R) C_t + R C_r` per pixel and channel.
pub fn compose(trans_color: &ImageBuffer, refl_color: &ImageBuffer, strength: &ImageBuffer) -> ImageBuffer {
    assert!(trans_color.same_shape(refl_color));
    assert_eq!(strength.channels, 1);
    let mut out = ImageBuffer::new(trans_color.width, trans_color.height, trans_color.channels);
    let ch = trans_color.channels;
    for p in 0..out.n_pixels() {
        let r = strength.data[p];
        for c in 0..ch {
            out.data[p * ch + c] = (1.0 - r) * trans_color.data[p * ch + c] + r * refl_color.data[p * ch + c];
        }
    }
    out
}

/// Aggregate per-plane strength and reflection images over disjoint hit
/// masks, then compose. Where hit masks overlap, the highest-indexed plane
/// wins and a diagnostic warning is emitted.
///
/// Returns `(C, combined R, combined C_r, winner map)` where `winner[p]` is
/// the plane index owning pixel `p`, or -1.
pub fn compose_multi_plane(
    trans_color: &ImageBuffer,
    per_plane: &[(ImageBuffer, ImageBuffer, ImageBuffer)], // (H_i, R_i, C_r^i)
    warn_overlap: bool,
) -> (ImageBuffer, ImageBuffer, ImageBuffer, Vec<i16>) {
    let (w, h) = (trans_color.width, trans_color.height);
    let mut strength = ImageBuffer::new(w, h, 1);
    let mut refl = ImageBuffer::new(w, h, 3);
    let mut winner = vec![-1i16; w * h];
    let mut overlaps = 0usize;
    for (i, (hit, r_i, cr_i)) in per_plane.iter().enumerate() {
        for p in 0..w * h {
            if hit.data[p] != 0.0 {
                if winner[p] >= 0 {
                    overlaps += 1;
                }
                winner[p] = i as i16;
                strength.data[p] = r_i.data[p];
                for c in 0..3 {
                    refl.data[p * 3 + c] = cr_i.data[p * 3 + c];
                }
            }
        }
    }
    if overlaps > 0 && warn_overlap {
        eprintln!("warning: {overlaps} pixels covered by multiple reflection planes; last plane wins");
    }
    let color = compose(trans_color, &refl, &strength);
    (color, strength, refl, winner)
}
