use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::scene::Camera;

use super::{SplatKind, WorldSplat, BBOX_Q, DILATION, NEAR_PLANE, TILE_SIZE};

/// A Gaussian projected to screen space.
#[derive(Debug, Clone)]
pub struct Splat2D {
    /// Projected center in pixel coordinates.
    pub mean: [f64; 2],
    /// Packed inverse screen covariance (a, b, c) of [[a, b], [b, c]].
    pub conic: [f64; 3],
    /// Center depth in camera space.
    pub depth: f64,
    /// Inclusive pixel-index bounds [x0, y0, x1, y1] where the splat can
    /// exceed the contribution cutoff.
    pub bbox: [i32; 4],
}

/// Per-splat attributes the compositors need, accepted-splat aligned.
#[derive(Debug, Clone)]
pub struct SplatAttr {
    pub opacity: f64,
    pub color: [f64; 3],
    pub mask_value: f64,
    pub intensity: f64,
    pub kind: SplatKind,
}

/// Projected, depth-sorted, tile-binned view of a splat set.
pub struct PreparedView {
    pub width: usize,
    pub height: usize,
    /// Accepted splats in front-to-back order.
    pub splats: Vec<Splat2D>,
    pub attrs: Vec<SplatAttr>,
    /// Accepted index -> index into the original input slice.
    pub input_index: Vec<u32>,
    /// Per tile, indices into `splats`, preserving depth order.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub n_inputs: usize,
}

/// Frustum limits for the EWA Jacobian: x/z and y/z are clamped to 1.3x
/// the half field of view so strongly off-axis splats keep a bounded
/// screen footprint (standard splatting practice).
fn clamped_xy(t: &Vector3<f64>, cam: &Camera) -> (f64, f64, bool, bool) {
    let lim_x = 1.3 * 0.5 * cam.width as f64 / cam.fx;
    let lim_y = 1.3 * 0.5 * cam.height as f64 / cam.fy;
    let rx = t.x / t.z;
    let ry = t.y / t.z;
    let cx = rx.clamp(-lim_x, lim_x) * t.z;
    let cy = ry.clamp(-lim_y, lim_y) * t.z;
    (cx, cy, rx.abs() <= lim_x, ry.abs() <= lim_y)
}

fn ewa_jacobian(t: &Vector3<f64>, cam: &Camera) -> Matrix2x3<f64> {
    let inv_z = 1.0 / t.z;
    let (tx, ty, _, _) = clamped_xy(t, cam);
    Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * tx * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * ty * inv_z * inv_z,
    )
}

/// EWA projection of one world Gaussian. Returns `None` for splats behind
/// the near plane or entirely off screen.
pub fn project_splat(position: &Vector3<f64>, cov: &Matrix3<f64>, cam: &Camera) -> Option<Splat2D> {
    let t = cam.world_to_cam(position);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let inv_z = 1.0 / t.z;
    let mx = cam.fx * t.x * inv_z + cam.cx;
    let my = cam.fy * t.y * inv_z + cam.cy;

    let j = ewa_jacobian(&t, cam);
    let v = cam.rotation * cov * cam.rotation.transpose();
    let mut s2 = j * v * j.transpose();
    s2[(0, 0)] += DILATION;
    s2[(1, 1)] += DILATION;
    let det = s2[(0, 0)] * s2[(1, 1)] - s2[(0, 1)] * s2[(1, 0)];
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    let conic = [s2[(1, 1)] * inv_det, -s2[(0, 1)] * inv_det, s2[(0, 0)] * inv_det];

    let rx = (BBOX_Q * s2[(0, 0)]).sqrt();
    let ry = (BBOX_Q * s2[(1, 1)]).sqrt();
    // Pixel ix has center ix + 0.5; keep every pixel whose center can be
    // within the cutoff radius.
    let x0 = (mx - rx - 0.5).ceil().max(0.0);
    let x1 = (mx + rx - 0.5).floor().min(cam.width as f64 - 1.0);
    let y0 = (my - ry - 0.5).ceil().max(0.0);
    let y1 = (my + ry - 0.5).floor().min(cam.height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some(Splat2D {
        mean: [mx, my],
        conic,
        depth: t.z,
        bbox: [x0 as i32, y0 as i32, x1 as i32, y1 as i32],
    })
}

/// Project, depth-sort and tile-bin a splat set for one camera.
pub fn prepare_view(inputs: &[WorldSplat], cam: &Camera) -> PreparedView {
    let projected: Vec<Option<Splat2D>> = inputs
        .par_iter()
        .map(|w| project_splat(&w.position, &w.cov, cam))
        .collect();

    let mut order: Vec<u32> = (0..inputs.len() as u32).filter(|&i| projected[i as usize].is_some()).collect();
    order.sort_by(|&a, &b| {
        let za = projected[a as usize].as_ref().unwrap().depth;
        let zb = projected[b as usize].as_ref().unwrap().depth;
        za.total_cmp(&zb).then(a.cmp(&b))
    });

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];

    let mut splats = Vec::with_capacity(order.len());
    let mut attrs = Vec::with_capacity(order.len());
    let mut input_index = Vec::with_capacity(order.len());
    for (si, &ii) in order.iter().enumerate() {
        let s = projected[ii as usize].clone().unwrap();
        let tx0 = s.bbox[0] as usize / TILE_SIZE;
        let tx1 = s.bbox[2] as usize / TILE_SIZE;
        let ty0 = s.bbox[1] as usize / TILE_SIZE;
        let ty1 = s.bbox[3] as usize / TILE_SIZE;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(si as u32);
            }
        }
        let w = &inputs[ii as usize];
        splats.push(s);
        attrs.push(SplatAttr {
            opacity: w.opacity,
            color: w.color,
            mask_value: w.mask_value,
            intensity: w.intensity,
            kind: w.kind,
        });
        input_index.push(ii);
    }

    PreparedView {
        width: cam.width,
        height: cam.height,
        splats,
        attrs,
        input_index,
        tiles,
        tiles_x,
        tiles_y,
        n_inputs: inputs.len(),
    }
}

/// Adjoint of `project_splat`: maps screen-level gradients back to the
/// world position and covariance.
///
/// `d_conic` uses the same (a, b, c) packing as `Splat2D::conic`, i.e. the
/// off-diagonal slot already aggregates both symmetric entries.
pub fn project_splat_backward(
    position: &Vector3<f64>,
    cov: &Matrix3<f64>,
    cam: &Camera,
    d_mean: [f64; 2],
    d_conic: [f64; 3],
    d_depth: f64,
) -> (Vector3<f64>, Matrix3<f64>) {
    let t = cam.world_to_cam(position);
    let inv_z = 1.0 / t.z;
    let (tx, ty, x_free, y_free) = clamped_xy(&t, cam);
    let j = ewa_jacobian(&t, cam);
    let v = cam.rotation * cov * cam.rotation.transpose();
    let mut s2 = j * v * j.transpose();
    s2[(0, 0)] += DILATION;
    s2[(1, 1)] += DILATION;
    let det = s2[(0, 0)] * s2[(1, 1)] - s2[(0, 1)] * s2[(1, 0)];
    let inv_det = 1.0 / det;
    let k = Matrix2::new(s2[(1, 1)] * inv_det, -s2[(0, 1)] * inv_det, -s2[(0, 1)] * inv_det, s2[(0, 0)] * inv_det);

    // conic = inv(S2): dL/dS2 = -K G K with G the symmetric gradient matrix.
    let g = Matrix2::new(d_conic[0], 0.5 * d_conic[1], 0.5 * d_conic[1], d_conic[2]);
    let d_s2 = -k * g * k;

    // S2 = J V J^T (+ const): dV = J^T dS2 J, dJ = 2 dS2 J V.
    let d_v = j.transpose() * d_s2 * j;
    let d_cov = cam.rotation.transpose() * d_v * cam.rotation;
    let d_j = 2.0 * d_s2 * j * v;

    // Partials of J and the projection w.r.t. the camera-space point. In
    // the clamped region the Jacobian stops tracking x (or y).
    let fx = cam.fx;
    let fy = cam.fy;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let mut d_t = Vector3::new(d_mean[0] * fx * inv_z, d_mean[1] * fy * inv_z, 0.0);
    d_t.z += -d_mean[0] * fx * t.x * inv_z2 - d_mean[1] * fy * t.y * inv_z2;
    if x_free {
        d_t.x += d_j[(0, 2)] * (-fx * inv_z2);
        d_t.z += d_j[(0, 2)] * (2.0 * fx * tx * inv_z3);
    } else {
        d_t.z += d_j[(0, 2)] * (fx * tx * inv_z3);
    }
    if y_free {
        d_t.y += d_j[(1, 2)] * (-fy * inv_z2);
        d_t.z += d_j[(1, 2)] * (2.0 * fy * ty * inv_z3);
    } else {
        d_t.z += d_j[(1, 2)] * (fy * ty * inv_z3);
    }
    d_t.z += d_j[(0, 0)] * (-fx * inv_z2) + d_j[(1, 1)] * (-fy * inv_z2);
    d_t.z += d_depth;

    let d_position = cam.rotation.transpose() * d_t;
    (d_position, d_cov)
}
