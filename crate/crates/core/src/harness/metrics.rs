//! Image quality metrics on [0, 1] images.

use crate::losses::ssim as ssim_impl;
use crate::scene::ImageBuffer;

/// MSE below this reports PSNR as the +inf sentinel (covers byte-identical
/// images and 16-bit quantization noise).
pub const PSNR_SENTINEL_MSE: f64 = 1e-10;

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for (near-)identical
/// images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert!(a.same_shape(b));
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse < PSNR_SENTINEL_MSE {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Mean SSIM with the standard 11x11 Gaussian window.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    ssim_impl::ssim(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_images_hit_the_sentinel() {
        let img = ImageBuffer::from_vec(4, 4, 3, (0..48).map(|i| i as f64 / 48.0).collect());
        assert!(psnr(&img, &img).is_infinite());
        assert_relative_eq!(ssim(&img, &img), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_offset_gives_twenty_db() {
        let a = ImageBuffer::from_vec(8, 8, 3, vec![0.0; 192]);
        let b = ImageBuffer::from_vec(8, 8, 3, vec![0.1; 192]);
        assert_relative_eq!(psnr(&a, &b), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn uncorrelated_noise_has_near_zero_ssim() {
        let mut rng = StdRng::seed_from_u64(314);
        let n = 32;
        let a = ImageBuffer::from_vec(n, n, 1, (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect());
        let b = ImageBuffer::from_vec(n, n, 1, (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect());
        assert!(ssim(&a, &b).abs() < 0.1);
    }
}
