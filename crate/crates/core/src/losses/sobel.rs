//! 3x3 Sobel gradients with reflect padding, plus the exact adjoint.

use crate::scene::ImageBuffer;

use super::ssim::reflect_index;

const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Per-channel Sobel x/y gradients. Returns `(gx, gy)` with the same shape.
pub fn sobel(img: &ImageBuffer) -> (ImageBuffer, ImageBuffer) {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut gx = ImageBuffer::new(w, h, ch);
    let mut gy = ImageBuffer::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut ax = 0.0;
                let mut ay = 0.0;
                for dy in 0..3usize {
                    let yy = reflect_index(y as isize + dy as isize - 1, h);
                    for dx in 0..3usize {
                        let xx = reflect_index(x as isize + dx as isize - 1, w);
                        let v = img.get(xx, yy, c);
                        ax += KX[dy][dx] * v;
                        ay += KY[dy][dx] * v;
                    }
                }
                gx.set(x, y, c, ax);
                gy.set(x, y, c, ay);
            }
        }
    }
    (gx, gy)
}

/// Adjoint of [`sobel`]: scatters upstream gradients on `(gx, gy)` back to
/// the image.
pub fn sobel_adjoint(d_gx: &ImageBuffer, d_gy: &ImageBuffer) -> ImageBuffer {
    assert!(d_gx.same_shape(d_gy));
    let (w, h, ch) = (d_gx.width, d_gx.height, d_gx.channels);
    let mut out = ImageBuffer::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let gxv = d_gx.get(x, y, c);
                let gyv = d_gy.get(x, y, c);
                if gxv == 0.0 && gyv == 0.0 {
                    continue;
                }
                for dy in 0..3usize {
                    let yy = reflect_index(y as isize + dy as isize - 1, h);
                    for dx in 0..3usize {
                        let xx = reflect_index(x as isize + dx as isize - 1, w);
                        let i = out.idx(xx, yy, c);
                        out.data[i] += KX[dy][dx] * gxv + KY[dy][dx] * gyv;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_image_has_zero_gradients() {
        let img = ImageBuffer::from_vec(5, 4, 1, vec![0.37; 20]);
        let (gx, gy) = sobel(&img);
        assert!(gx.data.iter().all(|v| v.abs() < 1e-14));
        assert!(gy.data.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn vertical_edge_hand_computed() {
        // 3x3 patch, left column 0, right column 1, centered edge.
        let img = ImageBuffer::from_vec(3, 3, 1, vec![0.0, 0.5, 1.0, 0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);
        let (gx, gy) = sobel(&img);
        // Center pixel: KX . patch = (-1*0 + 1*1)*1 + (-2*0 + 2*1) + (-1*0 + 1*1) = 4 * 0.5... direct:
        // row contributions: (-1*0 + 0*0.5 + 1*1) * (1,2,1 vertical profile) = 1 * 4 = 4? Hand: each of
        // the 3 rows contributes (-1*0 + 1*1) with weights 1,2,1 ->(1+2+1)*1.0 = 4.0 * ... values are
        // column-dependent: left 0, right 1 so per-row term = 1.0; weighted by 1,2,1 -> 4.0.
        assert_relative_eq!(gx.get(1, 1, 0), 4.0, epsilon = 1e-12);
        assert_relative_eq!(gy.get(1, 1, 0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn adjoint_is_exact_transpose() {
        // <Sobel(x), g> == <x, adjoint(g)> for random x, g.
        let mut rng = StdRng::seed_from_u64(9);
        let n = 7;
        let x = ImageBuffer::from_vec(n, n, 2, (0..n * n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let gx_up = ImageBuffer::from_vec(n, n, 2, (0..n * n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let gy_up = ImageBuffer::from_vec(n, n, 2, (0..n * n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (gx, gy) = sobel(&x);
        let lhs: f64 = gx.data.iter().zip(&gx_up.data).map(|(a, b)| a * b).sum::<f64>()
            + gy.data.iter().zip(&gy_up.data).map(|(a, b)| a * b).sum::<f64>();
        let adj = sobel_adjoint(&gx_up, &gy_up);
        let rhs: f64 = x.data.iter().zip(&adj.data).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
    }
}
