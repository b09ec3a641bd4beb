use nalgebra::{Matrix3, Vector3};

use crate::raster::{
    composite_reflection, composite_reflection_backward, composite_transmission,
    composite_transmission_backward, prepare_view, PreparedView, ReflectionUpstream, SplatKind,
    TransmissionRender, TransmissionUpstream, WorldSplat,
};
use crate::scene::{
    covariance_backward, normalize_backward, sh, Camera, GaussianScene, GradientSet, ImageBuffer,
    ReflectionPlane,
};

use super::{
    compose_multi_plane, hit_mask, mirror_point, mirror_rotation, reflection_matrix,
    reflection_strength, schlick_strength, schlick_strength_backward, ON_PLANE_EPS,
};

/// Rendering switches. The blocking flag and the two ablation flags mirror
/// the training schedule and the ablation studies.
#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// When false, the composed image is just the transmission image.
    pub enable_reflection: bool,
    /// Sever gradients from the reflection image to Gaussian parameters
    /// (plane parameters still receive theirs).
    pub block_reflection_to_gaussians: bool,
    /// When false, `C_r = C_raw` (intensity map ablation).
    pub use_intensity_map: bool,
    /// When false, the raw strength is the constant R0 inside the hit mask.
    pub use_schlick: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            enable_reflection: true,
            block_reflection_to_gaussians: false,
            use_intensity_map: true,
            use_schlick: true,
        }
    }
}

/// A primary Gaussian reflected across a plane.
#[derive(Debug, Clone)]
pub struct MirroredGaussian {
    /// Index of the source Gaussian.
    pub source: u32,
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

/// Per-view set of mirrored Gaussians for one plane.
#[derive(Debug, Clone)]
pub struct MirroredGaussianSet {
    pub plane_index: usize,
    pub items: Vec<MirroredGaussian>,
}

/// Mirror the primary Gaussians that sit on the camera's side of the plane.
/// Glass Gaussians and Gaussians on the plane itself are skipped.
pub fn mirror_gaussians(
    scene: &GaussianScene,
    plane: &ReflectionPlane,
    plane_index: usize,
    cam: &Camera,
) -> MirroredGaussianSet {
    let n = plane.unit_normal();
    let cam_side = if (cam.center() - plane.center).dot(&n) >= 0.0 { 1.0 } else { -1.0 };
    let mut items = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        if g.is_glass() {
            continue;
        }
        let dist = (g.position - plane.center).dot(&n);
        if dist * cam_side <= ON_PLANE_EPS {
            continue;
        }
        items.push(MirroredGaussian {
            source: i as u32,
            position: mirror_point(&g.position, plane),
            rotation: mirror_rotation(&g.rotation_matrix(), plane),
        });
    }
    MirroredGaussianSet { plane_index, items }
}

/// Per-plane forward products retained for composition and backward.
pub struct PlaneRender {
    pub hit: ImageBuffer,
    /// Schlick (or constant-R0) strength on hit pixels.
    pub strength_raw: ImageBuffer,
    /// Raw mirrored color.
    pub color_raw: ImageBuffer,
    /// Intensity map A.
    pub intensity: ImageBuffer,
    /// `C_r = max(0, C_raw * A)`.
    pub refl_color: ImageBuffer,
    /// `R_i = clamp01(R_raw * M_i)`.
    pub strength: ImageBuffer,
    pub mirrored: MirroredGaussianSet,
    inputs: Vec<WorldSplat>,
    prep: PreparedView,
}

/// Full forward render of one view.
pub struct ViewRender {
    pub trans: TransmissionRender,
    pub planes: Vec<PlaneRender>,
    /// Combined reflection strength (0 outside every hit mask).
    pub strength: ImageBuffer,
    /// Combined reflection color.
    pub refl_color: ImageBuffer,
    /// Which plane owns each pixel (-1: none).
    pub winner: Vec<i16>,
    /// Composed image `C`.
    pub color: ImageBuffer,
    trans_inputs: Vec<WorldSplat>,
    trans_prep: PreparedView,
}

impl ViewRender {
    /// Weighted depth-variance sum over this view's retained splat metadata.
    pub fn depth_variance(&self, weight: &ImageBuffer) -> f64 {
        crate::raster::depth_variance_sum(&self.trans_prep, &self.trans, weight)
    }

    /// Union of all plane hit masks.
    pub fn hit_any(&self) -> ImageBuffer {
        let mut out = ImageBuffer::new(self.color.width, self.color.height, 1);
        for pr in &self.planes {
            for (o, h) in out.data.iter_mut().zip(pr.hit.data.iter()) {
                if *h != 0.0 {
                    *o = 1.0;
                }
            }
        }
        out
    }
}

fn transmission_inputs(scene: &GaussianScene, cam: &Camera) -> Vec<WorldSplat> {
    let c = cam.center();
    scene
        .gaussians
        .iter()
        .map(|g| {
            let color = if g.is_glass() {
                [0.0; 3]
            } else {
                let dir = (g.position - c).normalize();
                sh::eval_color(scene.sh_degree, &g.sh, [dir.x, dir.y, dir.z])
            };
            WorldSplat {
                position: g.position,
                cov: g.covariance(),
                opacity: g.opacity(),
                color,
                mask_value: g.glass_mask,
                intensity: g.refl_intensity,
                kind: match g.glass_plane {
                    Some(p) => SplatKind::Glass(p),
                    None => SplatKind::Primary,
                },
            }
        })
        .collect()
}

fn reflection_inputs(
    scene: &GaussianScene,
    set: &MirroredGaussianSet,
    plane: &ReflectionPlane,
    cam: &Camera,
) -> Vec<WorldSplat> {
    let n = plane.unit_normal();
    let f = reflection_matrix(&n);
    let c = cam.center();
    set.items
        .iter()
        .map(|mi| {
            let g = &scene.gaussians[mi.source as usize];
            let cov_hat = f * g.covariance() * f;
            let v = (mi.position - c).normalize();
            let d_hat = f * v;
            let color = sh::eval_color(scene.sh_degree, &g.sh, [d_hat.x, d_hat.y, d_hat.z]);
            WorldSplat {
                position: mi.position,
                cov: cov_hat,
                opacity: g.opacity(),
                color,
                mask_value: 0.0,
                intensity: g.refl_intensity,
                kind: SplatKind::Primary,
            }
        })
        .collect()
}

pub fn render_view(
    scene: &GaussianScene,
    planes: &[ReflectionPlane],
    cam: &Camera,
    opts: &RenderOptions,
) -> ViewRender {
    let trans_inputs = transmission_inputs(scene, cam);
    let trans_prep = prepare_view(&trans_inputs, cam);
    let trans = composite_transmission(&trans_prep, planes.len());

    if !opts.enable_reflection || planes.is_empty() {
        let color = trans.color.clone();
        return ViewRender {
            trans,
            planes: Vec::new(),
            strength: ImageBuffer::new(cam.width, cam.height, 1),
            refl_color: ImageBuffer::new(cam.width, cam.height, 3),
            winner: vec![-1; cam.n_pixels()],
            color,
            trans_inputs,
            trans_prep,
        };
    }

    let mut plane_renders = Vec::with_capacity(planes.len());
    for (pi, plane) in planes.iter().enumerate() {
        let hit = hit_mask(plane, cam);
        let strength_raw = if opts.use_schlick {
            schlick_strength(plane, cam, &hit)
        } else {
            let r0 = plane.r0();
            hit.map(|h| h * r0)
        };
        let mirrored = mirror_gaussians(scene, plane, pi, cam);
        let inputs = reflection_inputs(scene, &mirrored, plane, cam);
        let prep = prepare_view(&inputs, cam);
        let refl = composite_reflection(&prep);
        let mut refl_color = ImageBuffer::new(cam.width, cam.height, 3);
        for p in 0..refl_color.n_pixels() {
            let a = refl.intensity.data[p];
            for c in 0..3 {
                let raw = refl.color_raw.data[p * 3 + c];
                let v = if opts.use_intensity_map { raw * a } else { raw };
                refl_color.data[p * 3 + c] = v.max(0.0);
            }
        }
        let strength = reflection_strength(&strength_raw, &trans.masks[pi]);
        plane_renders.push(PlaneRender {
            hit,
            strength_raw,
            color_raw: refl.color_raw,
            intensity: refl.intensity,
            refl_color,
            strength,
            mirrored,
            inputs,
            prep,
        });
    }

    let per_plane: Vec<(ImageBuffer, ImageBuffer, ImageBuffer)> = plane_renders
        .iter()
        .map(|pr| (pr.hit.clone(), pr.strength.clone(), pr.refl_color.clone()))
        .collect();
    let (color, strength, refl_color, winner) = compose_multi_plane(&trans.color, &per_plane, true);

    ViewRender {
        trans,
        planes: plane_renders,
        strength,
        refl_color,
        winner,
        color,
        trans_inputs,
        trans_prep,
    }
}

/// Upstream gradients for a full view.
pub struct ViewUpstream<'a> {
    /// dL/dC on the composed image.
    pub d_color: &'a ImageBuffer,
    /// Extra dL/dC_t contributions (gradient-conflict loss).
    pub d_trans_color_extra: Option<&'a ImageBuffer>,
    /// Extra dL/dM_i per plane (mask loss).
    pub d_mask_extra: Vec<Option<&'a ImageBuffer>>,
    /// Per-pixel weight of the depth-variance penalty.
    pub depth_var_weight: Option<&'a ImageBuffer>,
}

impl<'a> ViewUpstream<'a> {
    pub fn color_only(d_color: &'a ImageBuffer) -> Self {
        ViewUpstream { d_color, d_trans_color_extra: None, d_mask_extra: Vec::new(), depth_var_weight: None }
    }
}

/// Gradients plus the per-Gaussian densification signals of one view.
pub struct BackwardResult {
    pub grads: GradientSet,
    /// Norm of the NDC-space positional gradient from the transmission
    /// pass (the 3DGS densification statistic).
    pub screen_grad_ndc: Vec<f64>,
    /// Whether each Gaussian survived culling in the transmission pass.
    pub visible: Vec<bool>,
}

pub fn render_view_backward(
    scene: &GaussianScene,
    planes: &[ReflectionPlane],
    cam: &Camera,
    opts: &RenderOptions,
    fwd: &ViewRender,
    up: &ViewUpstream,
) -> BackwardResult {
    let mut gs = GradientSet::zeros(scene, planes.len());
    let n_px = cam.n_pixels();
    let reflective = opts.enable_reflection && !planes.is_empty();

    // Split dL/dC into transmission, reflection and strength parts.
    let mut g_ct = ImageBuffer::new(cam.width, cam.height, 3);
    let mut g_cr = ImageBuffer::new(cam.width, cam.height, 3);
    let mut g_r = ImageBuffer::new(cam.width, cam.height, 1);
    for p in 0..n_px {
        let r = if reflective { fwd.strength.data[p] } else { 0.0 };
        for c in 0..3 {
            let g = up.d_color.data[p * 3 + c];
            g_ct.data[p * 3 + c] = (1.0 - r) * g;
            if reflective {
                g_cr.data[p * 3 + c] = r * g;
                g_r.data[p] += (fwd.refl_color.data[p * 3 + c] - fwd.trans.color.data[p * 3 + c]) * g;
            }
        }
    }
    if let Some(extra) = up.d_trans_color_extra {
        for (a, b) in g_ct.data.iter_mut().zip(extra.data.iter()) {
            *a += b;
        }
    }

    // Per-plane mask upstreams start from the L_m extras.
    let mut g_masks: Vec<ImageBuffer> = (0..planes.len())
        .map(|i| match up.d_mask_extra.get(i).copied().flatten() {
            Some(b) => b.clone(),
            None => ImageBuffer::new(cam.width, cam.height, 1),
        })
        .collect();

    if reflective {
        for (pi, (plane, pr)) in planes.iter().zip(fwd.planes.iter()).enumerate() {
            // Route combined-gradient pixels owned by this plane.
            let mut g_cr_i = ImageBuffer::new(cam.width, cam.height, 3);
            let mut g_r_raw = ImageBuffer::new(cam.width, cam.height, 1);
            let mask = &fwd.trans.masks[pi];
            for p in 0..n_px {
                if fwd.winner[p] != pi as i16 {
                    continue;
                }
                for c in 0..3 {
                    g_cr_i.data[p * 3 + c] = g_cr.data[p * 3 + c];
                }
                // R_i = clamp01(R_raw * M_i); the product lives in [0, 1] by
                // construction, so pass gradients at the inclusive bounds.
                let prod = pr.strength_raw.data[p] * mask.data[p];
                if (0.0..=1.0).contains(&prod) {
                    let gr = g_r.data[p];
                    g_r_raw.data[p] = gr * mask.data[p];
                    g_masks[pi].data[p] += gr * pr.strength_raw.data[p];
                }
            }

            // Strength path into plane parameters.
            if opts.use_schlick {
                let (d_n, d_r0) = schlick_strength_backward(plane, cam, &pr.hit, &g_r_raw);
                gs.planes[pi].normal += d_n;
                gs.planes[pi].r0_logit += d_r0;
            } else {
                let r0 = plane.r0();
                let total: f64 = g_r_raw
                    .data
                    .iter()
                    .zip(pr.hit.data.iter())
                    .filter(|(_, h)| **h != 0.0)
                    .map(|(g, _)| g)
                    .sum();
                gs.planes[pi].r0_logit += total * r0 * (1.0 - r0);
            }

            // Reflection image path.
            let mut d_color_raw = ImageBuffer::new(cam.width, cam.height, 3);
            let mut d_intensity = ImageBuffer::new(cam.width, cam.height, 1);
            for p in 0..n_px {
                let a = pr.intensity.data[p];
                for c in 0..3 {
                    let g = g_cr_i.data[p * 3 + c];
                    if g == 0.0 {
                        continue;
                    }
                    let raw = pr.color_raw.data[p * 3 + c];
                    let pre = if opts.use_intensity_map { raw * a } else { raw };
                    if pre < 0.0 {
                        continue;
                    }
                    if opts.use_intensity_map {
                        d_color_raw.data[p * 3 + c] += g * a;
                        d_intensity.data[p] += g * raw;
                    } else {
                        d_color_raw.data[p * 3 + c] += g;
                    }
                }
            }

            let refl_up = ReflectionUpstream { d_color_raw: &d_color_raw, d_intensity: &d_intensity };
            let grads = composite_reflection_backward(&pr.prep, &pr.inputs, cam, &refl_up);

            // Chain raster-level gradients through the mirror transform.
            let n_unit = plane.unit_normal();
            let f = reflection_matrix(&n_unit);
            let cam_c = cam.center();
            let mut d_up_total = Vector3::zeros();
            let mut d_nhat_total = Vector3::zeros();
            let mut sh_scratch = vec![[0.0f64; 3]; scene.n_sh_coeffs()];
            for (mi, g) in pr.mirrored.items.iter().zip(grads.iter()) {
                let src = &scene.gaussians[mi.source as usize];
                let mut d_f = Matrix3::zeros();

                // Color path: c = eval_sh(sh, F * normalize(u_hat - cam)).
                for v in sh_scratch.iter_mut() {
                    *v = [0.0; 3];
                }
                let v = mi.position - cam_c;
                let v_hat = v.normalize();
                let d_hat = f * v_hat;
                let d_dhat_arr = sh::eval_color_backward(
                    scene.sh_degree,
                    &src.sh,
                    [d_hat.x, d_hat.y, d_hat.z],
                    g.color,
                    &mut sh_scratch,
                );
                let d_dhat = Vector3::new(d_dhat_arr[0], d_dhat_arr[1], d_dhat_arr[2]);
                d_f += d_dhat * v_hat.transpose();
                let d_vhat = f * d_dhat;
                let d_u_hat_color = normalize_backward(&v, &d_vhat);

                // Position path: u_hat = u - 2 ((u - u_p) . n) n.
                let d_u_hat = g.position + d_u_hat_color;
                let diff = src.position - plane.center;
                let s_dist = diff.dot(&n_unit);
                let d_p_source = f * d_u_hat;
                d_up_total += 2.0 * n_unit * n_unit.dot(&d_u_hat);
                d_nhat_total += -2.0 * (diff * n_unit.dot(&d_u_hat) + s_dist * d_u_hat);

                // Covariance path: Sigma_hat = F Sigma F.
                let d_cov_hat = 0.5 * (g.cov + g.cov.transpose());
                let d_sigma_source = f * d_cov_hat * f;
                d_f += 2.0 * d_cov_hat * f * src.covariance();

                // F = I - 2 n n^T.
                d_nhat_total += -2.0 * (d_f + d_f.transpose()) * n_unit;

                if !opts.block_reflection_to_gaussians {
                    let si = mi.source as usize;
                    gs.position[si] += d_p_source;
                    let (d_q, d_ls) = covariance_backward(&src.rotation, &src.log_scale, &d_sigma_source);
                    gs.rotation[si] += d_q;
                    gs.log_scale[si] += d_ls;
                    let o = src.opacity();
                    gs.opacity_logit[si] += g.opacity * o * (1.0 - o);
                    gs.refl_intensity[si] += g.intensity;
                    for (dst, srcv) in gs.sh[si].iter_mut().zip(sh_scratch.iter()) {
                        for c in 0..3 {
                            dst[c] += srcv[c];
                        }
                    }
                }
            }
            gs.planes[pi].center += d_up_total;
            gs.planes[pi].normal += normalize_backward(&plane.normal, &d_nhat_total);
        }
    }

    // Transmission pass backward.
    let trans_up = TransmissionUpstream {
        d_color: &g_ct,
        d_depth: None,
        d_transmittance: None,
        d_masks: &g_masks,
        depth_var_weight: up.depth_var_weight,
    };
    let grads = composite_transmission_backward(&fwd.trans_prep, &fwd.trans_inputs, cam, &trans_up);
    let mut screen_grad_ndc = vec![0.0f64; scene.len()];
    let mut visible = vec![false; scene.len()];
    let half_w = cam.width as f64 * 0.5;
    let half_h = cam.height as f64 * 0.5;
    let cam_c = cam.center();
    for (i, (g, src)) in grads.iter().zip(scene.gaussians.iter()).enumerate() {
        visible[i] = g.visible;
        let gx = g.screen_mean[0] * half_w;
        let gy = g.screen_mean[1] * half_h;
        screen_grad_ndc[i] = (gx * gx + gy * gy).sqrt();
        gs.position[i] += g.position;
        let (d_q, d_ls) = covariance_backward(&src.rotation, &src.log_scale, &g.cov);
        gs.rotation[i] += d_q;
        gs.log_scale[i] += d_ls;
        let o = src.opacity();
        gs.opacity_logit[i] += g.opacity * o * (1.0 - o);
        gs.glass_mask[i] += g.mask_value;
        if !src.is_glass() && g.color != [0.0; 3] {
            let v = src.position - cam_c;
            let v_hat = v.normalize();
            let d_dir = sh::eval_color_backward(
                scene.sh_degree,
                &src.sh,
                [v_hat.x, v_hat.y, v_hat.z],
                g.color,
                &mut gs.sh[i],
            );
            gs.position[i] += normalize_backward(&v, &Vector3::new(d_dir[0], d_dir[1], d_dir[2]));
        }
    }

    BackwardResult { grads: gs, screen_grad_ndc, visible }
}
