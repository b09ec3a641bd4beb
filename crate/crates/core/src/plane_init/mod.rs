//! Reflection-plane estimation from annotated masks, and glass-Gaussian
//! seeding.
//!
//! The pipeline runs once at the end of training stage 1:
//! mask boundary extraction -> candidate selection by projection ->
//! RANSAC plane fit -> minimum-area oriented bounding box for the extent ->
//! plane assembly with a material-dependent base reflectance, then 1000
//! glass Gaussians uniformly seeded on the rectangle.

mod morphology;
mod obb;
mod ransac;

pub use morphology::{dilate, erode3x3, extract_boundary, BOUNDARY_DILATION_PX};
pub use obb::{convex_hull_2d, obb_extent, ObbExtent};
pub use ransac::{ransac_plane, RansacConfig, RansacResult};

use nalgebra::Vector3;
use rand::Rng;

use crate::scene::{
    gram_schmidt_frame, logit, Camera, Gaussian, GaussianScene, ImageBuffer, ReflectionPlane,
};

#[derive(Debug, thiserror::Error)]
pub enum PlaneInitError {
    #[error("no Gaussian projects into the glass boundary band of views {views:?}")]
    NoCandidates { views: Vec<usize> },
    #[error("RANSAC consensus too small: best {best} of {total} candidates (need ratio {min_ratio})")]
    NoConsensus { best: usize, total: usize, min_ratio: f64 },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
}

/// One annotated view for a single plane class: camera plus binary mask.
#[derive(Debug, Clone)]
pub struct AnnotatedView {
    pub view_id: usize,
    pub cam: Camera,
    /// Binary mask (1 = reflective region of this plane class).
    pub mask: ImageBuffer,
}

/// Material of the reflective surface, fixing the initial base reflectance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Material {
    Glass,
    Mirror,
}

impl Material {
    pub fn initial_r0(self) -> f64 {
        match self {
            Material::Glass => 0.2,
            Material::Mirror => 1.0,
        }
    }
}

/// Gaussian centers whose projections land inside the boundary band of any
/// annotated view. Returns indices into the scene.
pub fn select_candidates(
    scene: &GaussianScene,
    bands: &[(usize, &Camera, ImageBuffer)],
) -> Result<Vec<usize>, PlaneInitError> {
    let mut selected = vec![false; scene.len()];
    for (_, cam, band) in bands {
        for (i, g) in scene.gaussians.iter().enumerate() {
            if selected[i] || g.is_glass() {
                continue;
            }
            let t = cam.world_to_cam(&g.position);
            if t.z <= crate::raster::NEAR_PLANE {
                continue;
            }
            let px = cam.fx * t.x / t.z + cam.cx;
            let py = cam.fy * t.y / t.z + cam.cy;
            if px < 0.0 || py < 0.0 {
                continue;
            }
            let (ix, iy) = (px as usize, py as usize);
            if ix < cam.width && iy < cam.height && band.get(ix, iy, 0) != 0.0 {
                selected[i] = true;
            }
        }
    }
    let out: Vec<usize> = (0..scene.len()).filter(|&i| selected[i]).collect();
    if out.is_empty() {
        Err(PlaneInitError::NoCandidates { views: bands.iter().map(|(v, _, _)| *v).collect() })
    } else {
        Ok(out)
    }
}

/// Full Appendix-style plane estimation for one plane class.
pub fn init_plane(
    scene: &GaussianScene,
    views: &[AnnotatedView],
    material: Material,
    rng: &mut impl Rng,
) -> Result<ReflectionPlane, PlaneInitError> {
    let bands: Vec<(usize, &Camera, ImageBuffer)> = views
        .iter()
        .map(|v| (v.view_id, &v.cam, extract_boundary(&v.mask)))
        .collect();
    let candidate_idx = select_candidates(scene, &bands)?;
    let points: Vec<Vector3<f64>> = candidate_idx.iter().map(|&i| scene.gaussians[i].position).collect();

    let fit = ransac_plane(&points, &RansacConfig::default(), rng)?;

    // Orient the normal toward the majority of the annotated cameras.
    let mut normal = fit.normal;
    let toward: i32 = views
        .iter()
        .map(|v| if (v.cam.center() - fit.center).dot(&normal) > 0.0 { 1 } else { -1 })
        .sum();
    if toward < 0 {
        normal = -normal;
    }

    let inlier_pts: Vec<Vector3<f64>> = fit.inliers.iter().map(|&i| points[i]).collect();
    let extent = obb_extent(&inlier_pts, &normal, &fit.center)?;

    // Express the OBB orientation as an in-plane angle against the canonical
    // frame, with the second axis chosen right-handed (u x v = n).
    let (a1, a2) = gram_schmidt_frame(&normal);
    let theta = extent.axis_u.dot(&a2).atan2(extent.axis_u.dot(&a1));

    Ok(ReflectionPlane::new(fit.center, normal, extent.width, extent.height, theta, logit(material.initial_r0())))
}

/// Number of glass Gaussians seeded per reflective plane.
pub const GLASS_SEED_COUNT: usize = 1000;

/// Uniformly sample glass Gaussians on the plane rectangle: `m = 1`,
/// tagged with the plane index, isotropic scale of diagonal/200 and opacity
/// 0.5.
pub fn seed_glass_gaussians(
    plane: &ReflectionPlane,
    plane_index: u16,
    n_sh: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<Gaussian> {
    let (ax_u, ax_v) = plane.axes();
    let diag = (plane.width * plane.width + plane.height * plane.height).sqrt();
    let scale = (diag / 200.0).max(1e-6);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u = (rng.gen::<f64>() - 0.5) * plane.width;
        let v = (rng.gen::<f64>() - 0.5) * plane.height;
        let mut g = Gaussian::unit(n_sh);
        g.position = plane.center + u * ax_u + v * ax_v;
        g.log_scale = Vector3::from_element(scale.ln());
        g.opacity_logit = logit(0.5);
        g.glass_mask = 1.0;
        g.glass_plane = Some(plane_index);
        out.push(g);
    }
    out
}
