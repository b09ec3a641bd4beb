//! Training objectives: image losses, depth-variance, gradient-conflict and
//! mask regularizers, with analytic gradients routed into
//! [`crate::reflection::ViewUpstream`].

pub mod sobel;
pub mod ssim;

use serde::{Deserialize, Serialize};

use crate::raster::EPS_T;
use crate::reflection::{ViewRender, ViewUpstream};
use crate::scene::ImageBuffer;

/// Loss weights of the total objective
/// `(1 - lambda) L1 + lambda L_DSSIM + l_d L_d + l_c L_c + l_m L_m`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    /// DSSIM mixing weight (lambda).
    pub lambda: f64,
    pub depth_var: f64,
    pub grad_conflict: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 0.2, depth_var: 0.005, grad_conflict: 0.2, mask: 0.5 }
    }
}

impl LossWeights {
    /// Stage-1 weights: image losses only.
    pub fn image_only(&self) -> LossWeights {
        LossWeights { lambda: self.lambda, depth_var: 0.0, grad_conflict: 0.0, mask: 0.0 }
    }
}

/// Individual loss values for one view.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub l1: f64,
    pub dssim: f64,
    pub depth_var: f64,
    pub grad_conflict: f64,
    pub mask: f64,
    pub total: f64,
}

/// Owned upstream gradient buffers for [`crate::reflection::render_view_backward`].
pub struct ViewLossGrads {
    pub d_color: ImageBuffer,
    pub d_trans_color_extra: Option<ImageBuffer>,
    pub d_mask_extra: Vec<Option<ImageBuffer>>,
    pub depth_var_weight: Option<ImageBuffer>,
}

impl ViewLossGrads {
    pub fn upstream(&self) -> ViewUpstream<'_> {
        ViewUpstream {
            d_color: &self.d_color,
            d_trans_color_extra: self.d_trans_color_extra.as_ref(),
            d_mask_extra: self.d_mask_extra.iter().map(|m| m.as_ref()).collect(),
            depth_var_weight: self.depth_var_weight.as_ref(),
        }
    }
}

/// Plain L1 / DSSIM pair on clamped images (no gradients).
pub fn image_losses(c: &ImageBuffer, c_gt: &ImageBuffer) -> (f64, f64) {
    assert!(c.same_shape(c_gt));
    let cc = c.clamp01();
    let l1 = cc.data.iter().zip(&c_gt.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / cc.data.len() as f64;
    let dssim = (1.0 - ssim::ssim(&cc, c_gt)) / 2.0;
    (l1, dssim)
}

/// Gradient-conflict value: mean over hit pixels of
/// `|sum_c grad(C_t) . grad(C_r)|` (no gradients).
pub fn gradient_conflict_loss(trans_color: &ImageBuffer, refl_color: &ImageBuffer, hit: &ImageBuffer) -> f64 {
    conflict_forward(trans_color, refl_color, hit, None, None).0
}

/// Mask loss: mean absolute difference between a rendered and an annotated
/// mask.
pub fn mask_loss(mask: &ImageBuffer, annotated: &ImageBuffer) -> f64 {
    assert!(mask.same_shape(annotated));
    mask.data.iter().zip(&annotated.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / mask.data.len() as f64
}

/// Weighted total of precomputed components.
pub fn total_loss(parts: &LossBreakdown, w: &LossWeights) -> f64 {
    (1.0 - w.lambda) * parts.l1
        + w.lambda * parts.dssim
        + w.depth_var * parts.depth_var
        + w.grad_conflict * parts.grad_conflict
        + w.mask * parts.mask
}

/// Sobel stencil of the reflection image, as consumed (detached) by the
/// gradient-conflict loss.
pub fn conflict_stencil(refl_color: &ImageBuffer) -> (ImageBuffer, ImageBuffer) {
    sobel::sobel(refl_color)
}

fn conflict_forward(
    trans_color: &ImageBuffer,
    refl_color: &ImageBuffer,
    hit: &ImageBuffer,
    pixel_mask: Option<&ImageBuffer>,
    frozen: Option<&(ImageBuffer, ImageBuffer)>,
) -> (f64, Vec<f64>, ImageBuffer, ImageBuffer, f64) {
    assert!(trans_color.same_shape(refl_color));
    let n_px = trans_color.n_pixels();
    let ch = trans_color.channels;
    let (gx_t, gy_t) = sobel::sobel(trans_color);
    let (gx_r, gy_r) = match frozen {
        Some((gx, gy)) => (gx.clone(), gy.clone()),
        None => sobel::sobel(refl_color),
    };
    let mut dots = vec![0.0f64; n_px];
    let mut value = 0.0;
    let mut norm = 0.0;
    for p in 0..n_px {
        if hit.data[p] == 0.0 {
            continue;
        }
        let wgt = pixel_mask.map_or(1.0, |m| m.data[p]);
        if wgt == 0.0 {
            continue;
        }
        let mut s = 0.0;
        for c in 0..ch {
            s += gx_t.data[p * ch + c] * gx_r.data[p * ch + c] + gy_t.data[p * ch + c] * gy_r.data[p * ch + c];
        }
        dots[p] = s;
        value += wgt * s.abs();
        norm += wgt;
    }
    if norm > 0.0 {
        value /= norm;
    }
    (value, dots, gx_r, gy_r, norm)
}

/// Configuration for the per-view loss evaluation.
pub struct ViewLossConfig<'a> {
    /// Target image, 3 channels, values in [0, 1].
    pub target: &'a ImageBuffer,
    /// Per-plane annotated masks for this view (only on annotated views).
    pub annotated_masks: Option<&'a [ImageBuffer]>,
    pub weights: LossWeights,
    /// Optional per-pixel weighting (used by gradient checks to excise
    /// hit-mask boundary pixels). `None` means uniform.
    pub pixel_mask: Option<&'a ImageBuffer>,
    /// Hold the conflict loss's detached reflection stencil fixed at these
    /// Sobel maps instead of recomputing them. Finite-difference oracles use
    /// this to realize the stop-gradient semantics; training leaves it
    /// `None` (recompute-and-detach is equivalent there).
    pub frozen_conflict_stencil: Option<&'a (ImageBuffer, ImageBuffer)>,
}

/// Evaluate the full objective on a rendered view and assemble the upstream
/// gradient buffers for the backward render pass.
///
/// The gradient-conflict term treats the reflection image as a detached
/// stencil: its gradient reaches only the transmission color. The
/// depth-variance term is gated to hit-mask pixels with coverage and is
/// handed to the rasterizer as a per-pixel weight map.
pub fn view_loss(fwd: &ViewRender, cfg: &ViewLossConfig) -> (LossBreakdown, ViewLossGrads) {
    let c = &fwd.color;
    let gt = cfg.target;
    assert!(c.same_shape(gt));
    let (w, h) = (c.width, c.height);
    let n_px = w * h;
    let ch = c.channels;
    let wts = &cfg.weights;

    let cc = c.clamp01();
    let weight_at = |p: usize| cfg.pixel_mask.map_or(1.0, |m| m.data[p]);

    // L1 with clamp-aware gradient.
    let mut d_color = ImageBuffer::new(w, h, ch);
    let mut l1 = 0.0;
    let mut l1_norm = 0.0;
    for p in 0..n_px {
        let wgt = weight_at(p);
        l1_norm += wgt * ch as f64;
        if wgt == 0.0 {
            continue;
        }
        for k in 0..ch {
            let i = p * ch + k;
            l1 += wgt * (cc.data[i] - gt.data[i]).abs();
        }
    }
    if l1_norm > 0.0 {
        l1 /= l1_norm;
        let scale = (1.0 - wts.lambda) / l1_norm;
        for p in 0..n_px {
            let wgt = weight_at(p);
            if wgt == 0.0 {
                continue;
            }
            for k in 0..ch {
                let i = p * ch + k;
                let diff = cc.data[i] - gt.data[i];
                let sgn = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                if (0.0..=1.0).contains(&c.data[i]) {
                    d_color.data[i] += scale * wgt * sgn;
                }
            }
        }
    }

    // DSSIM = (1 - SSIM)/2; dL/dSSIM = -lambda/2.
    let (mean_ssim, d_ssim) = ssim::ssim_and_backward(&cc, gt, cfg.pixel_mask, -wts.lambda / 2.0);
    let dssim = (1.0 - mean_ssim) / 2.0;
    if let Some(ds) = d_ssim {
        for i in 0..d_color.data.len() {
            if (0.0..=1.0).contains(&c.data[i]) {
                d_color.data[i] += ds.data[i];
            }
        }
    }

    // Union hit mask.
    let mut hit_any = ImageBuffer::new(w, h, 1);
    for pr in &fwd.planes {
        for p in 0..n_px {
            if pr.hit.data[p] != 0.0 {
                hit_any.data[p] = 1.0;
            }
        }
    }

    // Depth-variance: mean over hit pixels with coverage.
    let mut depth_var = 0.0;
    let mut depth_var_weight = None;
    if wts.depth_var > 0.0 && !fwd.planes.is_empty() {
        let mut gate = ImageBuffer::new(w, h, 1);
        let mut n_gated = 0.0f64;
        for p in 0..n_px {
            let wgt = weight_at(p);
            if wgt != 0.0 && hit_any.data[p] != 0.0 && fwd.trans.transmittance.data[p] >= EPS_T {
                gate.data[p] = wgt;
                n_gated += wgt;
            }
        }
        if n_gated > 0.0 {
            for v in gate.data.iter_mut() {
                *v /= n_gated;
            }
            depth_var = fwd.depth_variance(&gate);
            // Scale by the loss weight so the raster backward applies it as-is.
            for v in gate.data.iter_mut() {
                *v *= wts.depth_var;
            }
            depth_var_weight = Some(gate);
        }
    }

    // Gradient conflict with stop-gradient on the reflection stencil.
    let mut grad_conflict = 0.0;
    let mut d_trans_extra = None;
    if wts.grad_conflict > 0.0 && !fwd.planes.is_empty() {
        let (value, dots, gx_r, gy_r, norm) = conflict_forward(
            &fwd.trans.color,
            &fwd.refl_color,
            &hit_any,
            cfg.pixel_mask,
            cfg.frozen_conflict_stencil,
        );
        grad_conflict = value;
        if norm > 0.0 {
            let mut d_gx = ImageBuffer::new(w, h, ch);
            let mut d_gy = ImageBuffer::new(w, h, ch);
            for p in 0..n_px {
                if hit_any.data[p] == 0.0 {
                    continue;
                }
                let wgt = weight_at(p);
                if wgt == 0.0 || dots[p] == 0.0 {
                    continue;
                }
                let sgn = if dots[p] > 0.0 { 1.0 } else { -1.0 };
                let scale = wts.grad_conflict * wgt * sgn / norm;
                for k in 0..ch {
                    d_gx.data[p * ch + k] = scale * gx_r.data[p * ch + k];
                    d_gy.data[p * ch + k] = scale * gy_r.data[p * ch + k];
                }
            }
            d_trans_extra = Some(sobel::sobel_adjoint(&d_gx, &d_gy));
        }
    }

    // Mask loss on annotated views, averaged over planes.
    let mut mask_term = 0.0;
    let mut d_mask_extra: Vec<Option<ImageBuffer>> = vec![None; fwd.trans.masks.len()];
    if wts.mask > 0.0 && !fwd.trans.masks.is_empty() {
        if let Some(annotated) = cfg.annotated_masks {
            assert_eq!(annotated.len(), fwd.trans.masks.len());
            let n_planes = annotated.len() as f64;
            for (pi, (m, ma)) in fwd.trans.masks.iter().zip(annotated.iter()).enumerate() {
                let mut d = ImageBuffer::new(w, h, 1);
                let mut val = 0.0;
                let mut norm = 0.0;
                for p in 0..n_px {
                    let wgt = weight_at(p);
                    norm += wgt;
                    if wgt == 0.0 {
                        continue;
                    }
                    val += wgt * (m.data[p] - ma.data[p]).abs();
                }
                if norm > 0.0 {
                    val /= norm;
                    let scale = wts.mask / (norm * n_planes);
                    for p in 0..n_px {
                        let wgt = weight_at(p);
                        if wgt == 0.0 {
                            continue;
                        }
                        let diff = m.data[p] - ma.data[p];
                        d.data[p] = scale
                            * wgt
                            * if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                    }
                }
                mask_term += val / n_planes;
                d_mask_extra[pi] = Some(d);
            }
        }
    }

    let parts = LossBreakdown {
        l1,
        dssim,
        depth_var,
        grad_conflict,
        mask: mask_term,
        total: 0.0,
    };
    let total = total_loss(&parts, wts);
    let parts = LossBreakdown { total, ..parts };

    (
        parts,
        ViewLossGrads {
            d_color,
            d_trans_color_extra: d_trans_extra,
            d_mask_extra,
            depth_var_weight,
        },
    )
}
