use rayon::prelude::*;

use crate::scene::ImageBuffer;

use super::project::PreparedView;
use super::{SplatKind, ALPHA_MAX, ALPHA_SKIP, BBOX_Q, EPS_T, MAX_PLANES, TILE_SIZE, TRANS_EARLY_OUT};

/// Maps produced by the transmission pass.
pub struct TransmissionRender {
    /// Alpha-blended color of primary splats (3 channels).
    pub color: ImageBuffer,
    /// Transmittance-normalized depth; 0 where coverage is below `EPS_T`.
    pub depth: ImageBuffer,
    /// Unnormalized depth numerator (kept for the backward pass).
    pub depth_num: ImageBuffer,
    /// Accumulated alpha of primary splats.
    pub transmittance: ImageBuffer,
    /// One reflection mask per plane; primaries and that plane's glass
    /// splats composite together.
    pub masks: Vec<ImageBuffer>,
}

/// Maps produced by the reflection pass over mirrored splats.
pub struct ReflectionRender {
    pub color_raw: ImageBuffer,
    pub intensity: ImageBuffer,
}

#[inline]
pub(super) fn gaussian_weight(sp: &super::project::Splat2D, px: f64, py: f64) -> Option<(f64, f64, f64)> {
    let dx = px - sp.mean[0];
    let dy = py - sp.mean[1];
    let q = sp.conic[0] * dx * dx + 2.0 * sp.conic[1] * dx * dy + sp.conic[2] * dy * dy;
    if q > BBOX_Q || q < 0.0 {
        return None;
    }
    Some(((-0.5 * q).exp(), dx, dy))
}

/// Alpha for one splat at one pixel; `None` when skipped.
#[inline]
pub(super) fn splat_alpha(opacity: f64, g: f64) -> Option<f64> {
    let alpha = opacity * g;
    if alpha < ALPHA_SKIP {
        return None;
    }
    Some(alpha.min(ALPHA_MAX))
}

struct TileOut {
    tile: usize,
    // Pixel-major, channel-interleaved local buffers.
    color: Vec<f64>,
    depth_num: Vec<f64>,
    trans: Vec<f64>,
    masks: Vec<f64>, // n_planes-interleaved
}

/// Forward transmission pass: color, depth, transmittance and per-plane
/// reflection masks, composited front to back per pixel.
///
/// Primary splats blend into every channel; glass splats only into their
/// plane's mask chain, which tracks its own transmittance so foreground
/// occlusion is honored there without disturbing the color channels.
pub fn composite_transmission(prep: &PreparedView, n_planes: usize) -> TransmissionRender {
    assert!(n_planes <= MAX_PLANES, "at most {MAX_PLANES} reflection planes");
    let (w, h) = (prep.width, prep.height);

    let outs: Vec<TileOut> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let tx = tile % prep.tiles_x;
            let ty = tile / prep.tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let tw = TILE_SIZE.min(w - x0);
            let th = TILE_SIZE.min(h - y0);
            let mut out = TileOut {
                tile,
                color: vec![0.0; tw * th * 3],
                depth_num: vec![0.0; tw * th],
                trans: vec![0.0; tw * th],
                masks: vec![0.0; tw * th * n_planes],
            };
            let list = &prep.tiles[tile];
            for py_i in 0..th {
                for px_i in 0..tw {
                    let ix = (x0 + px_i) as i32;
                    let iy = (y0 + py_i) as i32;
                    let px = ix as f64 + 0.5;
                    let py = iy as f64 + 0.5;
                    let pi = py_i * tw + px_i;

                    let mut trans_c = 1.0f64;
                    let mut trans_m = [1.0f64; MAX_PLANES];
                    let mut c_acc = [0.0f64; 3];
                    let mut dnum = 0.0f64;
                    let mut tt = 0.0f64;
                    let mut m_acc = [0.0f64; MAX_PLANES];

                    for &si in list {
                        let sp = &prep.splats[si as usize];
                        if ix < sp.bbox[0] || ix > sp.bbox[2] || iy < sp.bbox[1] || iy > sp.bbox[3] {
                            continue;
                        }
                        let Some((g, _, _)) = gaussian_weight(sp, px, py) else { continue };
                        let attr = &prep.attrs[si as usize];
                        let Some(alpha) = splat_alpha(attr.opacity, g) else { continue };
                        match attr.kind {
                            SplatKind::Primary => {
                                let wgt = alpha * trans_c;
                                c_acc[0] += attr.color[0] * wgt;
                                c_acc[1] += attr.color[1] * wgt;
                                c_acc[2] += attr.color[2] * wgt;
                                dnum += sp.depth * wgt;
                                tt += wgt;
                                let one_m = 1.0 - alpha;
                                for p in 0..n_planes {
                                    m_acc[p] += attr.mask_value * alpha * trans_m[p];
                                    trans_m[p] *= one_m;
                                }
                                trans_c *= one_m;
                            }
                            SplatKind::Glass(p) => {
                                let p = p as usize;
                                if p < n_planes {
                                    m_acc[p] += attr.mask_value * alpha * trans_m[p];
                                    trans_m[p] *= 1.0 - alpha;
                                }
                            }
                        }
                        let live_m = trans_m[..n_planes].iter().any(|&t| t >= TRANS_EARLY_OUT);
                        if trans_c < TRANS_EARLY_OUT && !live_m {
                            break;
                        }
                    }

                    out.color[pi * 3] = c_acc[0];
                    out.color[pi * 3 + 1] = c_acc[1];
                    out.color[pi * 3 + 2] = c_acc[2];
                    out.depth_num[pi] = dnum;
                    out.trans[pi] = tt;
                    for p in 0..n_planes {
                        out.masks[pi * n_planes + p] = m_acc[p];
                    }
                }
            }
            out
        })
        .collect();

    let mut color = ImageBuffer::new(w, h, 3);
    let mut depth_num = ImageBuffer::new(w, h, 1);
    let mut transmittance = ImageBuffer::new(w, h, 1);
    let mut masks = vec![ImageBuffer::new(w, h, 1); n_planes];
    for out in outs {
        let tx = out.tile % prep.tiles_x;
        let ty = out.tile / prep.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let tw = TILE_SIZE.min(w - x0);
        let th = TILE_SIZE.min(h - y0);
        for py_i in 0..th {
            for px_i in 0..tw {
                let pi = py_i * tw + px_i;
                let (x, y) = (x0 + px_i, y0 + py_i);
                for c in 0..3 {
                    color.set(x, y, c, out.color[pi * 3 + c]);
                }
                depth_num.set(x, y, 0, out.depth_num[pi]);
                transmittance.set(x, y, 0, out.trans[pi]);
                for p in 0..n_planes {
                    masks[p].set(x, y, 0, out.masks[pi * n_planes + p]);
                }
            }
        }
    }

    let mut depth = ImageBuffer::new(w, h, 1);
    for i in 0..depth.data.len() {
        let t = transmittance.data[i];
        depth.data[i] = if t >= EPS_T { depth_num.data[i] / t } else { 0.0 };
    }

    TransmissionRender { color, depth, depth_num, transmittance, masks }
}

/// Forward reflection pass: raw mirrored color and the intensity map, one
/// shared transmittance chain.
pub fn composite_reflection(prep: &PreparedView) -> ReflectionRender {
    let (w, h) = (prep.width, prep.height);
    let outs: Vec<(usize, Vec<f64>, Vec<f64>)> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let tx = tile % prep.tiles_x;
            let ty = tile / prep.tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let tw = TILE_SIZE.min(w - x0);
            let th = TILE_SIZE.min(h - y0);
            let mut color = vec![0.0f64; tw * th * 3];
            let mut intensity = vec![0.0f64; tw * th];
            let list = &prep.tiles[tile];
            for py_i in 0..th {
                for px_i in 0..tw {
                    let ix = (x0 + px_i) as i32;
                    let iy = (y0 + py_i) as i32;
                    let px = ix as f64 + 0.5;
                    let py = iy as f64 + 0.5;
                    let pi = py_i * tw + px_i;
                    let mut trans = 1.0f64;
                    for &si in list {
                        let sp = &prep.splats[si as usize];
                        if ix < sp.bbox[0] || ix > sp.bbox[2] || iy < sp.bbox[1] || iy > sp.bbox[3] {
                            continue;
                        }
                        let Some((g, _, _)) = gaussian_weight(sp, px, py) else { continue };
                        let attr = &prep.attrs[si as usize];
                        let Some(alpha) = splat_alpha(attr.opacity, g) else { continue };
                        let wgt = alpha * trans;
                        color[pi * 3] += attr.color[0] * wgt;
                        color[pi * 3 + 1] += attr.color[1] * wgt;
                        color[pi * 3 + 2] += attr.color[2] * wgt;
                        intensity[pi] += attr.intensity * wgt;
                        trans *= 1.0 - alpha;
                        if trans < TRANS_EARLY_OUT {
                            break;
                        }
                    }
                }
            }
            (tile, color, intensity)
        })
        .collect();

    let mut color_raw = ImageBuffer::new(w, h, 3);
    let mut intensity = ImageBuffer::new(w, h, 1);
    for (tile, c, a) in outs {
        let tx = tile % prep.tiles_x;
        let ty = tile / prep.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let tw = TILE_SIZE.min(w - x0);
        let th = TILE_SIZE.min(h - y0);
        for py_i in 0..th {
            for px_i in 0..tw {
                let pi = py_i * tw + px_i;
                let (x, y) = (x0 + px_i, y0 + py_i);
                for ch in 0..3 {
                    color_raw.set(x, y, ch, c[pi * 3 + ch]);
                }
                intensity.set(x, y, 0, a[pi]);
            }
        }
    }
    ReflectionRender { color_raw, intensity }
}

/// Weighted depth-variance sum: for every pixel with nonzero weight and
/// coverage at least `EPS_T`, accumulates
/// `weight(u) * sum_i |z_i - D(u)| o_i G_i T_i` over primary splats.
pub fn depth_variance_sum(prep: &PreparedView, fwd: &TransmissionRender, weight: &ImageBuffer) -> f64 {
    assert_eq!(weight.channels, 1);
    let (w, _h) = (prep.width, prep.height);
    let per_tile: Vec<f64> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let tx = tile % prep.tiles_x;
            let ty = tile / prep.tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let tw = TILE_SIZE.min(w - x0);
            let th = TILE_SIZE.min(prep.height - y0);
            let list = &prep.tiles[tile];
            let mut acc = 0.0f64;
            for py_i in 0..th {
                for px_i in 0..tw {
                    let (x, y) = (x0 + px_i, y0 + py_i);
                    let wgt = weight.get(x, y, 0);
                    if wgt == 0.0 {
                        continue;
                    }
                    let tt = fwd.transmittance.get(x, y, 0);
                    if tt < EPS_T {
                        continue;
                    }
                    let d = fwd.depth.get(x, y, 0);
                    let px = x as f64 + 0.5;
                    let py = y as f64 + 0.5;
                    let ix = x as i32;
                    let iy = y as i32;
                    let mut trans_c = 1.0f64;
                    let mut trans_m = [1.0f64; MAX_PLANES];
                    let n_planes = fwd.masks.len();
                    let mut sum = 0.0f64;
                    for &si in list {
                        let sp = &prep.splats[si as usize];
                        if ix < sp.bbox[0] || ix > sp.bbox[2] || iy < sp.bbox[1] || iy > sp.bbox[3] {
                            continue;
                        }
                        let Some((g, _, _)) = gaussian_weight(sp, px, py) else { continue };
                        let attr = &prep.attrs[si as usize];
                        let Some(alpha) = splat_alpha(attr.opacity, g) else { continue };
                        match attr.kind {
                            SplatKind::Primary => {
                                sum += (sp.depth - d).abs() * alpha * trans_c;
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
                    acc += wgt * sum;
                }
            }
            acc
        })
        .collect();
    per_tile.iter().sum()
}
