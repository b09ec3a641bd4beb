use nalgebra::{Matrix3, Vector3, Vector4};

use super::sigmoid;

/// One anisotropic 3D Gaussian primitive.
///
/// Box-constrained quantities are stored in unconstrained form so plain
/// gradient steps keep them feasible: opacity as a logit, scale as
/// log-scale. The rotation quaternion is stored raw (possibly unnormalized
/// between optimizer steps) and normalized on use.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    /// Center in world units.
    pub position: Vector3<f64>,
    /// Rotation quaternion (w, x, y, z), normalized on use.
    pub rotation: Vector4<f64>,
    /// Per-axis log of the Gaussian's standard deviations.
    pub log_scale: Vector3<f64>,
    /// Pre-sigmoid opacity.
    pub opacity_logit: f64,
    /// SH coefficients, coefficient-major: `sh[k] = [r, g, b]`.
    pub sh: Vec<[f64; 3]>,
    /// Glass-mask weight `m`, kept in [0, 1] by post-step clamping.
    pub glass_mask: f64,
    /// Reflection intensity `a`; scales the mirrored color toward linear
    /// radiometric space.
    pub refl_intensity: f64,
    /// Set at seeding time for Gaussians that live on a reflection plane
    /// and only ever render into the reflection mask. The value is the
    /// plane index.
    pub glass_plane: Option<u16>,
}

impl Gaussian {
    /// A unit Gaussian at the origin with the given SH coefficient count.
    pub fn unit(n_sh: usize) -> Self {
        Gaussian {
            position: Vector3::zeros(),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vector3::zeros(),
            opacity_logit: 0.0,
            sh: vec![[0.0; 3]; n_sh],
            glass_mask: 0.0,
            refl_intensity: 1.0,
            glass_plane: None,
        }
    }

    pub fn is_glass(&self) -> bool {
        self.glass_plane.is_some()
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&quat_normalize(&self.rotation))
    }

    /// World-space covariance `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_from_rs(&self.rotation, &self.scale())
    }
}

/// The full Gaussian population of a scene.
#[derive(Debug, Clone)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    /// Maximum SH degree; every Gaussian carries `(degree+1)^2` coefficients
    /// per channel.
    pub sh_degree: usize,
}

impl GaussianScene {
    pub fn new(sh_degree: usize) -> Self {
        GaussianScene { gaussians: Vec::new(), sh_degree }
    }

    pub fn n_sh_coeffs(&self) -> usize {
        (self.sh_degree + 1) * (self.sh_degree + 1)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Normalize a raw quaternion; falls back to identity for a zero vector.
pub fn quat_normalize(q: &Vector4<f64>) -> Vector4<f64> {
    let n = q.norm();
    if n <= 1e-300 {
        Vector4::new(1.0, 0.0, 0.0, 0.0)
    } else {
        q / n
    }
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// 3D covariance from a raw quaternion and positive per-axis scales:
/// `R S S^T R^T` with `S = diag(scale)`.
pub fn covariance_from_rs(rotation: &Vector4<f64>, scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = quat_to_matrix(&quat_normalize(rotation));
    let d = Matrix3::from_diagonal(&scale.component_mul(scale));
    let m = r * d * r.transpose();
    // Re-symmetrize to kill rounding asymmetry.
    0.5 * (m + m.transpose())
}

/// Partial derivatives of the rotation matrix w.r.t. the unit quaternion
/// components (w, x, y, z).
fn quat_matrix_partials(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        2.0 * Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0),
        2.0 * Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x),
        2.0 * Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y),
        2.0 * Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0),
    ]
}

/// Adjoint of [`covariance_from_rs`]: maps a symmetric gradient w.r.t. the
/// world covariance to gradients w.r.t. the raw quaternion and log-scales.
pub fn covariance_backward(
    rotation: &Vector4<f64>,
    log_scale: &Vector3<f64>,
    d_cov: &Matrix3<f64>,
) -> (Vector4<f64>, Vector3<f64>) {
    let qn = quat_normalize(rotation);
    let r = quat_to_matrix(&qn);
    let s2 = log_scale.map(|l| (2.0 * l).exp());
    let d = Matrix3::from_diagonal(&s2);
    let g = 0.5 * (d_cov + d_cov.transpose());

    // Sigma = R D R^T: dR = 2 G R D; dD_kk = (R^T G R)_kk.
    let d_r = 2.0 * g * r * d;
    let rtgr = r.transpose() * g * r;
    let d_log_scale = Vector3::new(
        rtgr[(0, 0)] * 2.0 * s2[0],
        rtgr[(1, 1)] * 2.0 * s2[1],
        rtgr[(2, 2)] * 2.0 * s2[2],
    );

    let partials = quat_matrix_partials(&qn);
    let mut d_qn = Vector4::zeros();
    for (i, p) in partials.iter().enumerate() {
        d_qn[i] = d_r.component_mul(p).sum();
    }
    // Chain through normalization of the raw quaternion.
    let n = rotation.norm();
    let d_q = if n <= 1e-300 {
        Vector4::zeros()
    } else {
        let u = rotation / n;
        (d_qn - u * u.dot(&d_qn)) / n
    };
    (d_q, d_log_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn covariance_identity_rotation_unit_scale() {
        let q = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let cov = covariance_from_rs(&q, &Vector3::new(1.0, 1.0, 1.0));
        assert_relative_eq!(cov, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn covariance_axis_aligned() {
        let q = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let cov = covariance_from_rs(&q, &Vector3::new(2.0, 1.0, 1.0));
        assert_relative_eq!(cov, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-14);
    }

    #[test]
    fn covariance_rot90_about_z() {
        // 90 deg about z maps the x axis (variance 4) onto y:
        // R diag(4,1,1) R^T = diag(1,4,1).
        let half = std::f64::consts::FRAC_PI_4;
        let q = Vector4::new(half.cos(), 0.0, 0.0, half.sin());
        let cov = covariance_from_rs(&q, &Vector3::new(2.0, 1.0, 1.0));
        assert_relative_eq!(cov, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn quat_renormalization_is_first_order_stable() {
        // Perturbing a unit quaternion by eps and renormalizing changes the
        // rotation's direction cosines by O(eps).
        let q = quat_normalize(&Vector4::new(0.3, -0.5, 0.7, 0.4));
        let r0 = quat_to_matrix(&q);
        for eps in [1e-3, 1e-5] {
            let qp = quat_normalize(&(q + Vector4::new(eps, -eps, eps, eps)));
            let r1 = quat_to_matrix(&qp);
            let max_delta = (r1 - r0).abs().max();
            assert!(max_delta < 10.0 * eps, "delta {max_delta} vs eps {eps}");
        }
    }

    proptest! {
        #[test]
        fn covariance_symmetric_psd(
            qw in -1.0f64..1.0, qx in -1.0f64..1.0, qy in -1.0f64..1.0, qz in -1.0f64..1.0,
            s0 in 0.05f64..4.0, s1 in 0.05f64..4.0, s2 in 0.05f64..4.0,
        ) {
            prop_assume!(Vector4::new(qw, qx, qy, qz).norm() > 1e-3);
            let cov = covariance_from_rs(&Vector4::new(qw, qx, qy, qz), &Vector3::new(s0, s1, s2));
            prop_assert!((cov - cov.transpose()).abs().max() < 1e-12);
            let eig = cov.symmetric_eigenvalues();
            let mut want = [s0 * s0, s1 * s1, s2 * s2];
            want.sort_by(f64::total_cmp);
            let mut got = [eig[0], eig[1], eig[2]];
            got.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(want.iter()) {
                prop_assert!((g - w).abs() < 1e-9 * (1.0 + w.abs()));
            }
        }
    }
}
