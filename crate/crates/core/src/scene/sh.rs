//! Real spherical harmonics up to degree 3, in the basis and ordering used
//! by standard Gaussian-splatting pipelines.

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_DEGREE: usize = 3;

pub fn n_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluate the SH basis for a unit direction. Writes `(degree+1)^2` values.
pub fn basis(degree: usize, dir: [f64; 3], out: &mut [f64]) {
    debug_assert!(degree <= MAX_DEGREE);
    debug_assert!(out.len() >= n_coeffs(degree));
    let [x, y, z] = dir;
    out[0] = SH_C0;
    if degree >= 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[9] = SH_C3[0] * y * (3.0 * xx - yy);
        out[10] = SH_C3[1] * x * y * z;
        out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        out[14] = SH_C3[5] * z * (xx - yy);
        out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
}

/// Gradient of every basis function w.r.t. the (unconstrained) direction
/// components. Writes `(degree+1)^2` rows of `[d/dx, d/dy, d/dz]`.
pub fn basis_grad(degree: usize, dir: [f64; 3], out: &mut [[f64; 3]]) {
    debug_assert!(out.len() >= n_coeffs(degree));
    let [x, y, z] = dir;
    out[0] = [0.0, 0.0, 0.0];
    if degree >= 1 {
        out[1] = [0.0, -SH_C1, 0.0];
        out[2] = [0.0, 0.0, SH_C1];
        out[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        out[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        out[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        out[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        out[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        out[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[9] = [SH_C3[0] * 6.0 * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
        out[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
        out[11] = [
            -2.0 * SH_C3[2] * x * y,
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * SH_C3[2] * y * z,
        ];
        out[12] = [
            -6.0 * SH_C3[3] * x * z,
            -6.0 * SH_C3[3] * y * z,
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        out[13] = [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * SH_C3[4] * x * y,
            8.0 * SH_C3[4] * x * z,
        ];
        out[14] = [2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)];
        out[15] = [SH_C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * SH_C3[6] * x * y, 0.0];
    }
}

/// View-dependent color: SH expansion plus the conventional 0.5 offset,
/// clamped to non-negative. `sh` is coefficient-major `[k][channel]`.
pub fn eval_color(degree: usize, sh: &[[f64; 3]], dir: [f64; 3]) -> [f64; 3] {
    let n = n_coeffs(degree);
    let mut b = [0.0f64; 16];
    basis(degree, dir, &mut b);
    let mut rgb = [0.5f64; 3];
    for (k, bk) in b.iter().enumerate().take(n.min(sh.len())) {
        for c in 0..3 {
            rgb[c] += bk * sh[k][c];
        }
    }
    [rgb[0].max(0.0), rgb[1].max(0.0), rgb[2].max(0.0)]
}

/// Adjoint of [`eval_color`]: accumulates into `d_sh` and returns the
/// gradient w.r.t. the direction. Channels clamped at zero pass nothing.
pub fn eval_color_backward(
    degree: usize,
    sh: &[[f64; 3]],
    dir: [f64; 3],
    d_color: [f64; 3],
    d_sh: &mut [[f64; 3]],
) -> [f64; 3] {
    let n = n_coeffs(degree).min(sh.len());
    let mut b = [0.0f64; 16];
    basis(degree, dir, &mut b);
    let mut raw = [0.5f64; 3];
    for (k, bk) in b.iter().enumerate().take(n) {
        for c in 0..3 {
            raw[c] += bk * sh[k][c];
        }
    }
    let mask = [raw[0] > 0.0, raw[1] > 0.0, raw[2] > 0.0];
    let mut grad = [[0.0f64; 3]; 16];
    basis_grad(degree, dir, &mut grad);
    let mut d_dir = [0.0f64; 3];
    for k in 0..n {
        for c in 0..3 {
            if mask[c] && d_color[c] != 0.0 {
                d_sh[k][c] += b[k] * d_color[c];
                for axis in 0..3 {
                    d_dir[axis] += d_color[c] * sh[k][c] * grad[k][axis];
                }
            }
        }
    }
    d_dir
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degree0_is_direction_invariant() {
        let sh = vec![[0.7, -0.2, 1.3]];
        let dirs = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [-0.577, 0.577, 0.577]];
        for d in dirs {
            let c = eval_color(0, &sh, d);
            assert_relative_eq!(c[0], SH_C0 * 0.7 + 0.5, epsilon = 1e-14);
            assert_relative_eq!(c[1], (SH_C0 * -0.2f64 + 0.5).max(0.0), epsilon = 1e-14);
            assert_relative_eq!(c[2], SH_C0 * 1.3 + 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn degree1_band0_only_is_symmetric() {
        let sh = vec![[0.4, 0.4, 0.4], [0.0; 3], [0.0; 3], [0.0; 3]];
        let d = [0.2672612419124244, -0.5345224838248488, 0.8017837257372732];
        let dm = [-d[0], -d[1], -d[2]];
        assert_eq!(eval_color(1, &sh, d), eval_color(1, &sh, dm));
    }

    #[test]
    fn degree1_z_coefficient_antisymmetry() {
        // Only the z-linear basis differs between +z and -z; the gap is
        // 2 * SH_C1 * c1z per channel.
        let c1z = 0.31;
        let sh = vec![[0.2; 3], [0.0; 3], [c1z, c1z, c1z], [0.0; 3]];
        let up = eval_color(1, &sh, [0.0, 0.0, 1.0]);
        let down = eval_color(1, &sh, [0.0, 0.0, -1.0]);
        for c in 0..3 {
            assert_relative_eq!(up[c] - down[c], 2.0 * SH_C1 * c1z, epsilon = 1e-14);
        }
    }

    #[test]
    fn basis_grad_matches_finite_differences() {
        let dir = [0.48, -0.6, 0.64];
        let h = 1e-6;
        let mut grad = [[0.0; 3]; 16];
        basis_grad(3, dir, &mut grad);
        for axis in 0..3 {
            let mut dp = dir;
            let mut dm = dir;
            dp[axis] += h;
            dm[axis] -= h;
            let (mut bp, mut bm) = ([0.0; 16], [0.0; 16]);
            basis(3, dp, &mut bp);
            basis(3, dm, &mut bm);
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert_relative_eq!(grad[k][axis], fd, epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }
}
