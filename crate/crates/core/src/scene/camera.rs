use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Pinhole camera: intrinsics plus a world-to-camera rigid transform.
///
/// Camera space is right-handed with +x right, +y down, +z forward; pixel
/// centers sit at integer + 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation: `x_cam = R x + t`.
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Self {
        debug_assert!(fx > 0.0 && fy > 0.0);
        Camera { fx, fy, cx, cy, width, height, rotation, translation }
    }

    /// Camera that sits at `eye` and looks at `target` with `up` hint.
    pub fn look_at(
        fx: f64,
        width: usize,
        height: usize,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        // Rows of the world-to-camera rotation are the camera axes.
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -rotation * eye;
        Camera::new(fx, fx, width as f64 * 0.5, height as f64 * 0.5, width, height, rotation, translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    pub fn world_to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Unit view direction from the camera center toward a world point.
    pub fn view_dir(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center()).normalize()
    }

    /// Unit world-space direction of the ray through pixel center
    /// `(ix + 0.5, iy + 0.5)`.
    pub fn pixel_ray(&self, ix: usize, iy: usize) -> Vector3<f64> {
        let x = (ix as f64 + 0.5 - self.cx) / self.fx;
        let y = (iy as f64 + 0.5 - self.cy) / self.fy;
        let d_cam = Vector3::new(x, y, 1.0);
        (self.rotation.transpose() * d_cam).normalize()
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn look_at_center_and_forward() {
        let eye = Vector3::new(0.0, 0.0, 3.0);
        let cam = Camera::look_at(100.0, 64, 64, eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0));
        assert_relative_eq!(cam.center(), eye, epsilon = 1e-12);
        // The origin is 3 units straight ahead.
        assert_relative_eq!(cam.world_to_cam(&Vector3::zeros()), Vector3::new(0.0, 0.0, 3.0), epsilon = 1e-12);
        // Rotation is orthonormal.
        let rtr = cam.rotation.transpose() * cam.rotation;
        assert_relative_eq!(rtr, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn principal_pixel_ray_is_forward() {
        let cam = Camera::look_at(
            120.0,
            64,
            64,
            Vector3::new(1.0, -2.0, 4.0),
            Vector3::new(1.0, -2.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        );
        // Principal point (32, 32) lies on the pixel grid at index 31..32
        // boundary; ray through (31.5+0.5, 31.5+0.5) hits it exactly.
        let ray = cam.pixel_ray(31, 31);
        let fwd = cam.rotation.transpose() * Vector3::new(0.0, 0.0, 1.0);
        // Half-pixel offset: compare against the analytic direction.
        let x = (31.5 - 32.0) / 120.0;
        let want = (cam.rotation.transpose() * Vector3::new(x, x, 1.0)).normalize();
        assert_relative_eq!(ray, want, epsilon = 1e-12);
        assert!(ray.dot(&fwd) > 0.99);
    }
}
