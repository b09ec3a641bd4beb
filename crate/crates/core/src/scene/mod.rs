//! Domain types shared by every stage of the pipeline.

mod camera;
mod gaussian;
mod gradients;
mod image;
mod plane;
pub mod sh;

pub use camera::Camera;
pub use gaussian::{
    covariance_backward, covariance_from_rs, quat_normalize, quat_to_matrix, Gaussian, GaussianScene,
};
pub use gradients::{GradientSet, PlaneGrad};
pub use image::ImageBuffer;
pub use plane::{gram_schmidt_frame, ReflectionPlane};

/// Numerically safe sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse sigmoid; input is clamped away from {0, 1}.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Adjoint of `v.normalize()`: maps a gradient w.r.t. the unit vector back
/// to the raw vector through the projection `(I - u u^T) / |v|`.
pub fn normalize_backward(raw: &nalgebra::Vector3<f64>, d_unit: &nalgebra::Vector3<f64>) -> nalgebra::Vector3<f64> {
    let n = raw.norm();
    if n <= 1e-300 {
        return nalgebra::Vector3::zeros();
    }
    let u = raw / n;
    (d_unit - u * u.dot(d_unit)) / n
}
