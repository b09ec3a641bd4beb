//! SSIM with an 11x11 Gaussian window (sigma 1.5) and its exact adjoint.
//!
//! Borders use symmetric reflect padding (edge pixel duplicated), which also
//! copes with images smaller than the window.

use crate::scene::ImageBuffer;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-0.5 * d * d / (SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Symmetric reflection of an index into [0, n): ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur of a single-channel image.
fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = kernel();
    let r = WINDOW as isize / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                let xx = reflect_index(x as isize + j as isize - r, w);
                acc += kj * src[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                let yy = reflect_index(y as isize + j as isize - r, h);
                acc += kj * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Exact adjoint of [`blur`]: scatters with the same reflected indexing.
fn blur_adjoint(grad: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = kernel();
    let r = WINDOW as isize / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (j, kj) in k.iter().enumerate() {
                let yy = reflect_index(y as isize + j as isize - r, h);
                tmp[yy * w + x] += kj * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = tmp[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (j, kj) in k.iter().enumerate() {
                let xx = reflect_index(x as isize + j as isize - r, w);
                out[y * w + xx] += kj * g;
            }
        }
    }
    out
}

/// Mean SSIM over pixels and channels, weighted by an optional per-pixel
/// mask, plus the gradient w.r.t. the first image scaled by `d_upstream`
/// (the derivative of the loss w.r.t. the mean-SSIM value).
///
/// Returns `(mean_ssim, d_x)` where `d_x` is `None` when `d_upstream` is 0.
pub fn ssim_and_backward(
    x: &ImageBuffer,
    y: &ImageBuffer,
    pixel_weight: Option<&ImageBuffer>,
    d_upstream: f64,
) -> (f64, Option<ImageBuffer>) {
    assert!(x.same_shape(y));
    let (w, h, ch) = (x.width, x.height, x.channels);
    let n_px = w * h;
    let weight_sum: f64 = match pixel_weight {
        Some(m) => m.data.iter().sum::<f64>() * ch as f64,
        None => (n_px * ch) as f64,
    };
    if weight_sum == 0.0 {
        return (0.0, None);
    }

    let mut mean = 0.0;
    let mut d_x = (d_upstream != 0.0).then(|| ImageBuffer::new(w, h, ch));

    let mut xc = vec![0.0; n_px];
    let mut yc = vec![0.0; n_px];
    for c in 0..ch {
        for p in 0..n_px {
            xc[p] = x.data[p * ch + c];
            yc[p] = y.data[p * ch + c];
        }
        let mu_x = blur(&xc, w, h);
        let mu_y = blur(&yc, w, h);
        let xx: Vec<f64> = xc.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = yc.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xc.iter().zip(yc.iter()).map(|(a, b)| a * b).collect();
        let sxx = blur(&xx, w, h);
        let syy = blur(&yy, w, h);
        let sxy = blur(&xy, w, h);

        let mut g_mu = vec![0.0; n_px];
        let mut g_sxx = vec![0.0; n_px];
        let mut g_sxy = vec![0.0; n_px];
        for p in 0..n_px {
            let wgt = pixel_weight.map_or(1.0, |m| m.data[p]);
            let (mx, my) = (mu_x[p], mu_y[p]);
            let vx = sxx[p] - mx * mx;
            let vy = syy[p] - my * my;
            let cov = sxy[p] - mx * my;
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * cov + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = vx + vy + C2;
            let s = (a1 * a2) / (b1 * b2);
            mean += wgt * s;
            // At a window's exact maximum (identical patches give S = 1.0
            // bitwise) the gradient is defined as exactly zero; otherwise
            // rounding noise in the cancellation below would push an
            // adaptive optimizer off a perfect fit.
            if s == 1.0 {
                continue;
            }
            if d_x.is_some() && wgt != 0.0 {
                let up = d_upstream * wgt / weight_sum;
                let ds_da1 = a2 / (b1 * b2);
                let ds_da2 = a1 / (b1 * b2);
                let ds_db1 = -s / b1;
                let ds_db2 = -s / b2;
                g_mu[p] = up * (ds_da1 * 2.0 * my + ds_db1 * 2.0 * mx + ds_da2 * (-2.0 * my) + ds_db2 * (-2.0 * mx));
                g_sxx[p] = up * ds_db2;
                g_sxy[p] = up * 2.0 * ds_da2;
            }
        }
        if let Some(dst) = d_x.as_mut() {
            let a_mu = blur_adjoint(&g_mu, w, h);
            let a_sxx = blur_adjoint(&g_sxx, w, h);
            let a_sxy = blur_adjoint(&g_sxy, w, h);
            for p in 0..n_px {
                dst.data[p * ch + c] += a_mu[p] + 2.0 * xc[p] * a_sxx[p] + yc[p] * a_sxy[p];
            }
        }
    }
    (mean / weight_sum, d_x)
}

/// Mean SSIM without gradients.
pub fn ssim(x: &ImageBuffer, y: &ImageBuffer) -> f64 {
    ssim_and_backward(x, y, None, 0.0).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_images_have_ssim_one() {
        let mut rng = StdRng::seed_from_u64(1);
        let img = ImageBuffer::from_vec(8, 8, 3, (0..192).map(|_| rng.gen_range(0.0..1.0)).collect());
        assert_relative_eq!(ssim(&img, &img), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_pixel_image_matches_direct_formula() {
        // Brute-force oracle: evaluate the SSIM definition directly with the
        // same reflect indexing (independent double-loop implementation).
        let x = ImageBuffer::from_vec(2, 1, 1, vec![0.25, 0.75]);
        let y = ImageBuffer::from_vec(2, 1, 1, vec![0.75, 0.25]);

        let k = kernel();
        let r = WINDOW as isize / 2;
        let mut expect = 0.0;
        for px in 0..2isize {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let wgt = k[(dy + r) as usize] * k[(dx + r) as usize];
                    let xi = reflect_index(px + dx, 2);
                    let _yi = reflect_index(dy, 1);
                    let (a, b) = (x.data[xi], y.data[xi]);
                    mx += wgt * a;
                    my += wgt * b;
                    sxx += wgt * a * a;
                    syy += wgt * b * b;
                    sxy += wgt * a * b;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            expect += ((2.0 * mx * my + C1) * (2.0 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        }
        expect /= 2.0;
        assert_relative_eq!(ssim(&x, &y), expect, epsilon = 1e-12);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(42);
        let n = 6;
        let x = ImageBuffer::from_vec(n, n, 3, (0..n * n * 3).map(|_| rng.gen_range(0.1..0.9)).collect());
        let y = ImageBuffer::from_vec(n, n, 3, (0..n * n * 3).map(|_| rng.gen_range(0.1..0.9)).collect());
        let (_, d) = ssim_and_backward(&x, &y, None, 1.0);
        let d = d.unwrap();
        let h = 1e-6;
        for idx in [0usize, 17, 50, 93, n * n * 3 - 1] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data[idx] += h;
            xm.data[idx] -= h;
            let fd = (ssim(&xp, &y) - ssim(&xm, &y)) / (2.0 * h);
            assert_relative_eq!(d.data[idx], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
    }
}
