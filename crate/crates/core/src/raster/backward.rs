use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::scene::ImageBuffer;

use super::forward::{gaussian_weight, splat_alpha};
use super::project::{project_splat_backward, PreparedView};
use super::{SplatKind, WorldSplat, ALPHA_MAX, EPS_T, MAX_PLANES, TILE_SIZE, TRANS_EARLY_OUT};

/// World-level gradients for one input splat.
#[derive(Debug, Clone, Default)]
pub struct WorldSplatGrad {
    pub position: Vector3<f64>,
    pub cov: Matrix3<f64>,
    /// Gradient w.r.t. the activated opacity.
    pub opacity: f64,
    pub color: [f64; 3],
    pub mask_value: f64,
    pub intensity: f64,
    /// Raw screen-space gradient on the projected mean, in pixels (kept for
    /// densification statistics).
    pub screen_mean: [f64; 2],
    /// Whether the splat survived culling for this view.
    pub visible: bool,
}

/// Upstream per-pixel gradients for the transmission pass.
pub struct TransmissionUpstream<'a> {
    /// dL/dC_t, 3 channels.
    pub d_color: &'a ImageBuffer,
    /// dL/dD_t on the normalized depth map (1 channel).
    pub d_depth: Option<&'a ImageBuffer>,
    /// dL/dT_t (1 channel).
    pub d_transmittance: Option<&'a ImageBuffer>,
    /// dL/dM_p per plane, 1 channel each.
    pub d_masks: &'a [ImageBuffer],
    /// Per-pixel weight of the depth-variance penalty
    /// `sum_i |z_i - D(u)| o_i G_i T_i`; zero where the penalty is gated off.
    pub depth_var_weight: Option<&'a ImageBuffer>,
}

/// Upstream per-pixel gradients for the reflection pass.
pub struct ReflectionUpstream<'a> {
    pub d_color_raw: &'a ImageBuffer,
    pub d_intensity: &'a ImageBuffer,
}

#[derive(Clone, Copy, Default)]
struct Grad2D {
    mean: [f64; 2],
    conic: [f64; 3],
    depth: f64,
    opacity: f64,
    color: [f64; 3],
    mask_value: f64,
    intensity: f64,
}

impl Grad2D {
    fn add(&mut self, o: &Grad2D) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.depth += o.depth;
        self.opacity += o.opacity;
        self.mask_value += o.mask_value;
        self.intensity += o.intensity;
    }

    fn is_zero(&self) -> bool {
        self.mean == [0.0; 2]
            && self.conic == [0.0; 3]
            && self.depth == 0.0
            && self.opacity == 0.0
            && self.color == [0.0; 3]
            && self.mask_value == 0.0
            && self.intensity == 0.0
    }
}

struct Contribution {
    list_idx: u32,
    alpha: f64,
    g: f64,
    clamped: bool,
    trans_c: f64,
    trans_m: [f64; MAX_PLANES],
}

/// Scatter 2D-level gradients through alpha and the Gaussian kernel into
/// the local accumulator.
#[inline]
fn scatter_geometry(
    local: &mut Grad2D,
    sp: &super::project::Splat2D,
    px: f64,
    py: f64,
    opacity: f64,
    g: f64,
    clamped: bool,
    d_alpha: f64,
) {
    let d_alpha = if clamped { 0.0 } else { d_alpha };
    local.opacity += d_alpha * g;
    let d_g = d_alpha * opacity;
    let d_q = -0.5 * g * d_g;
    let dx = px - sp.mean[0];
    let dy = py - sp.mean[1];
    local.conic[0] += d_q * dx * dx;
    local.conic[1] += d_q * 2.0 * dx * dy;
    local.conic[2] += d_q * dy * dy;
    let ddx = d_q * (2.0 * sp.conic[0] * dx + 2.0 * sp.conic[1] * dy);
    let ddy = d_q * (2.0 * sp.conic[1] * dx + 2.0 * sp.conic[2] * dy);
    local.mean[0] -= ddx;
    local.mean[1] -= ddy;
}

/// Reverse-mode pass of `composite_transmission`.
///
/// Replays every pixel's traversal (same skips, same clamps, same early
/// out) and assembles exact gradients with the prefix/suffix identity
/// `d(sum_j v_j w_j)/d(alpha_i) = v_i T_i - suffix_i / (1 - alpha_i)`.
/// Depth gradients and the depth-variance penalty additionally flow through
/// the normalization `D = Dnum / T_t`. Per-tile accumulators are merged in
/// tile order, so results do not depend on thread scheduling.
pub fn composite_transmission_backward(
    prep: &PreparedView,
    inputs: &[WorldSplat],
    cam: &crate::scene::Camera,
    up: &TransmissionUpstream,
) -> Vec<WorldSplatGrad> {
    let n_planes = up.d_masks.len();
    assert!(n_planes <= MAX_PLANES);
    let (w, h) = (prep.width, prep.height);

    let tile_grads: Vec<Vec<Grad2D>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let tx = tile % prep.tiles_x;
            let ty = tile / prep.tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let tw = TILE_SIZE.min(w - x0);
            let th = TILE_SIZE.min(h - y0);
            let list = &prep.tiles[tile];
            let mut local = vec![Grad2D::default(); list.len()];
            let mut scratch: Vec<Contribution> = Vec::with_capacity(64);

            for py_i in 0..th {
                for px_i in 0..tw {
                    let (x, y) = (x0 + px_i, y0 + py_i);
                    let ix = x as i32;
                    let iy = y as i32;
                    let px = x as f64 + 0.5;
                    let py = y as f64 + 0.5;

                    // Replay the forward traversal.
                    scratch.clear();
                    let mut trans_c = 1.0f64;
                    let mut trans_m = [1.0f64; MAX_PLANES];
                    for (li, &si) in list.iter().enumerate() {
                        let sp = &prep.splats[si as usize];
                        if ix < sp.bbox[0] || ix > sp.bbox[2] || iy < sp.bbox[1] || iy > sp.bbox[3] {
                            continue;
                        }
                        let Some((g, _, _)) = gaussian_weight(sp, px, py) else { continue };
                        let attr = &prep.attrs[si as usize];
                        let Some(alpha) = splat_alpha(attr.opacity, g) else { continue };
                        let clamped = attr.opacity * g > ALPHA_MAX;
                        scratch.push(Contribution { list_idx: li as u32, alpha, g, clamped, trans_c, trans_m });
                        match attr.kind {
                            SplatKind::Primary => {
                                let one_m = 1.0 - alpha;
                                trans_c *= one_m;
                                for t in trans_m[..n_planes].iter_mut() {
                                    *t *= one_m;
                                }
                            }
                            SplatKind::Glass(p) => {
                                let p = p as usize;
                                if p < n_planes {
                                    trans_m[p] *= 1.0 - alpha;
                                }
                            }
                        }
                        let live_m = trans_m[..n_planes].iter().any(|&t| t >= TRANS_EARLY_OUT);
                        if trans_c < TRANS_EARLY_OUT && !live_m {
                            break;
                        }
                    }
                    if scratch.is_empty() {
                        continue;
                    }

                    // Totals over the composited set (identical to forward).
                    let mut c_total = [0.0f64; 3];
                    let mut t_total = 0.0f64;
                    let mut z_total = 0.0f64;
                    let mut m_total = [0.0f64; MAX_PLANES];
                    for e in &scratch {
                        let si = list[e.list_idx as usize] as usize;
                        let attr = &prep.attrs[si];
                        match attr.kind {
                            SplatKind::Primary => {
                                let wgt = e.alpha * e.trans_c;
                                for c in 0..3 {
                                    c_total[c] += attr.color[c] * wgt;
                                }
                                t_total += wgt;
                                z_total += prep.splats[si].depth * wgt;
                                for p in 0..n_planes {
                                    m_total[p] += attr.mask_value * e.alpha * e.trans_m[p];
                                }
                            }
                            SplatKind::Glass(p) => {
                                let p = p as usize;
                                if p < n_planes {
                                    m_total[p] += attr.mask_value * e.alpha * e.trans_m[p];
                                }
                            }
                        }
                    }

                    let g_color = [up.d_color.get(x, y, 0), up.d_color.get(x, y, 1), up.d_color.get(x, y, 2)];
                    let g_depth = up.d_depth.map_or(0.0, |b| b.get(x, y, 0));
                    let g_trans = up.d_transmittance.map_or(0.0, |b| b.get(x, y, 0));
                    let mut g_mask = [0.0f64; MAX_PLANES];
                    for (p, m) in up.d_masks.iter().enumerate() {
                        g_mask[p] = m.get(x, y, 0);
                    }
                    let dvw = up.depth_var_weight.map_or(0.0, |b| b.get(x, y, 0));

                    let gated = t_total >= EPS_T;
                    let d_map = if gated { z_total / t_total } else { 0.0 };
                    // dL_d/dD = -sum_k sign(z_k - D) w_k over primaries.
                    let mut s_sign = 0.0f64;
                    if dvw != 0.0 && gated {
                        for e in &scratch {
                            let si = list[e.list_idx as usize] as usize;
                            if prep.attrs[si].kind == SplatKind::Primary {
                                s_sign += (prep.splats[si].depth - d_map).signum() * e.alpha * e.trans_c;
                            }
                        }
                    }

                    // Second walk: prefix sums and per-contribution grads.
                    let mut c_prefix = [0.0f64; 3];
                    let mut t_prefix = 0.0f64;
                    let mut z_prefix = 0.0f64;
                    let mut v_prefix = 0.0f64;
                    let mut v_total = 0.0f64;
                    if dvw != 0.0 && gated {
                        for e in &scratch {
                            let si = list[e.list_idx as usize] as usize;
                            if prep.attrs[si].kind == SplatKind::Primary {
                                v_total += (prep.splats[si].depth - d_map).abs() * e.alpha * e.trans_c;
                            }
                        }
                    }
                    let mut m_prefix = [0.0f64; MAX_PLANES];

                    for e in &scratch {
                        let si = list[e.list_idx as usize] as usize;
                        let sp = &prep.splats[si];
                        let attr = &prep.attrs[si];
                        let lg = &mut local[e.list_idx as usize];
                        let om = 1.0 - e.alpha;
                        let mut d_alpha = 0.0f64;
                        match attr.kind {
                            SplatKind::Primary => {
                                let wgt = e.alpha * e.trans_c;
                                for c in 0..3 {
                                    c_prefix[c] += attr.color[c] * wgt;
                                    if g_color[c] != 0.0 {
                                        d_alpha += g_color[c] * (attr.color[c] * e.trans_c - (c_total[c] - c_prefix[c]) / om);
                                        lg.color[c] += g_color[c] * wgt;
                                    }
                                }
                                t_prefix += wgt;
                                z_prefix += sp.depth * wgt;
                                if g_trans != 0.0 {
                                    d_alpha += g_trans * (e.trans_c - (t_total - t_prefix) / om);
                                }
                                if gated && (g_depth != 0.0 || dvw != 0.0) {
                                    let dz_num_da = sp.depth * e.trans_c - (z_total - z_prefix) / om;
                                    let dt_da = e.trans_c - (t_total - t_prefix) / om;
                                    let dmap_da = (dz_num_da * t_total - z_total * dt_da) / (t_total * t_total);
                                    if g_depth != 0.0 {
                                        d_alpha += g_depth * dmap_da;
                                        lg.depth += g_depth * wgt / t_total;
                                    }
                                    if dvw != 0.0 {
                                        let v_i = (sp.depth - d_map).abs();
                                        v_prefix += v_i * wgt;
                                        let sgn = (sp.depth - d_map).signum();
                                        lg.depth += dvw * (sgn * wgt - s_sign * wgt / t_total);
                                        d_alpha += dvw * (v_i * e.trans_c - (v_total - v_prefix) / om - s_sign * dmap_da);
                                    }
                                }
                                for p in 0..n_planes {
                                    let wm = e.alpha * e.trans_m[p];
                                    m_prefix[p] += attr.mask_value * wm;
                                    if g_mask[p] != 0.0 {
                                        d_alpha += g_mask[p] * (attr.mask_value * e.trans_m[p] - (m_total[p] - m_prefix[p]) / om);
                                        lg.mask_value += g_mask[p] * wm;
                                    }
                                }
                            }
                            SplatKind::Glass(p) => {
                                let p = p as usize;
                                if p < n_planes {
                                    let wm = e.alpha * e.trans_m[p];
                                    m_prefix[p] += attr.mask_value * wm;
                                    if g_mask[p] != 0.0 {
                                        d_alpha += g_mask[p] * (attr.mask_value * e.trans_m[p] - (m_total[p] - m_prefix[p]) / om);
                                        lg.mask_value += g_mask[p] * wm;
                                    }
                                }
                            }
                        }
                        scatter_geometry(lg, sp, px, py, attr.opacity, e.g, e.clamped, d_alpha);
                    }
                }
            }
            local
        })
        .collect();

    merge_and_finalize(prep, inputs, cam, tile_grads)
}

/// Reverse-mode pass of `composite_reflection`.
pub fn composite_reflection_backward(
    prep: &PreparedView,
    inputs: &[WorldSplat],
    cam: &crate::scene::Camera,
    up: &ReflectionUpstream,
) -> Vec<WorldSplatGrad> {
    let (w, h) = (prep.width, prep.height);
    let tile_grads: Vec<Vec<Grad2D>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let tx = tile % prep.tiles_x;
            let ty = tile / prep.tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let tw = TILE_SIZE.min(w - x0);
            let th = TILE_SIZE.min(h - y0);
            let list = &prep.tiles[tile];
            let mut local = vec![Grad2D::default(); list.len()];
            let mut scratch: Vec<Contribution> = Vec::with_capacity(64);

            for py_i in 0..th {
                for px_i in 0..tw {
                    let (x, y) = (x0 + px_i, y0 + py_i);
                    let ix = x as i32;
                    let iy = y as i32;
                    let px = x as f64 + 0.5;
                    let py = y as f64 + 0.5;

                    scratch.clear();
                    let mut trans = 1.0f64;
                    for (li, &si) in list.iter().enumerate() {
                        let sp = &prep.splats[si as usize];
                        if ix < sp.bbox[0] || ix > sp.bbox[2] || iy < sp.bbox[1] || iy > sp.bbox[3] {
                            continue;
                        }
                        let Some((g, _, _)) = gaussian_weight(sp, px, py) else { continue };
                        let attr = &prep.attrs[si as usize];
                        let Some(alpha) = splat_alpha(attr.opacity, g) else { continue };
                        let clamped = attr.opacity * g > ALPHA_MAX;
                        scratch.push(Contribution {
                            list_idx: li as u32,
                            alpha,
                            g,
                            clamped,
                            trans_c: trans,
                            trans_m: [0.0; MAX_PLANES],
                        });
                        trans *= 1.0 - alpha;
                        if trans < TRANS_EARLY_OUT {
                            break;
                        }
                    }
                    if scratch.is_empty() {
                        continue;
                    }

                    let mut c_total = [0.0f64; 3];
                    let mut a_total = 0.0f64;
                    for e in &scratch {
                        let attr = &prep.attrs[list[e.list_idx as usize] as usize];
                        let wgt = e.alpha * e.trans_c;
                        for c in 0..3 {
                            c_total[c] += attr.color[c] * wgt;
                        }
                        a_total += attr.intensity * wgt;
                    }

                    let g_color = [
                        up.d_color_raw.get(x, y, 0),
                        up.d_color_raw.get(x, y, 1),
                        up.d_color_raw.get(x, y, 2),
                    ];
                    let g_int = up.d_intensity.get(x, y, 0);

                    let mut c_prefix = [0.0f64; 3];
                    let mut a_prefix = 0.0f64;
                    for e in &scratch {
                        let si = list[e.list_idx as usize] as usize;
                        let sp = &prep.splats[si];
                        let attr = &prep.attrs[si];
                        let lg = &mut local[e.list_idx as usize];
                        let om = 1.0 - e.alpha;
                        let wgt = e.alpha * e.trans_c;
                        let mut d_alpha = 0.0f64;
                        for c in 0..3 {
                            c_prefix[c] += attr.color[c] * wgt;
                            if g_color[c] != 0.0 {
                                d_alpha += g_color[c] * (attr.color[c] * e.trans_c - (c_total[c] - c_prefix[c]) / om);
                                lg.color[c] += g_color[c] * wgt;
                            }
                        }
                        a_prefix += attr.intensity * wgt;
                        if g_int != 0.0 {
                            d_alpha += g_int * (attr.intensity * e.trans_c - (a_total - a_prefix) / om);
                            lg.intensity += g_int * wgt;
                        }
                        scatter_geometry(lg, sp, px, py, attr.opacity, e.g, e.clamped, d_alpha);
                    }
                }
            }
            local
        })
        .collect();

    merge_and_finalize(prep, inputs, cam, tile_grads)
}

fn merge_and_finalize(
    prep: &PreparedView,
    inputs: &[WorldSplat],
    cam: &crate::scene::Camera,
    tile_grads: Vec<Vec<Grad2D>>,
) -> Vec<WorldSplatGrad> {
    // Fixed tile order keeps the accumulation deterministic.
    let mut acc = vec![Grad2D::default(); prep.splats.len()];
    for (tile, local) in tile_grads.iter().enumerate() {
        for (li, g) in local.iter().enumerate() {
            if !g.is_zero() {
                acc[prep.tiles[tile][li] as usize].add(g);
            }
        }
    }

    let mut out = vec![WorldSplatGrad::default(); prep.n_inputs];
    let finalized: Vec<(u32, WorldSplatGrad)> = acc
        .par_iter()
        .enumerate()
        .map(|(si, g2)| {
            let ii = prep.input_index[si];
            let input = &inputs[ii as usize];
            let (d_pos, d_cov) =
                project_splat_backward(&input.position, &input.cov, cam, g2.mean, g2.conic, g2.depth);
            (
                ii,
                WorldSplatGrad {
                    position: d_pos,
                    cov: d_cov,
                    opacity: g2.opacity,
                    color: g2.color,
                    mask_value: g2.mask_value,
                    intensity: g2.intensity,
                    screen_mean: g2.mean,
                    visible: true,
                },
            )
        })
        .collect();
    for (ii, g) in finalized {
        out[ii as usize] = g;
    }
    out
}
