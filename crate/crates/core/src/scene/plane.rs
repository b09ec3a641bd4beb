use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::sigmoid;

/// Learnable rectangular reflection plane.
///
/// Only the center, normal and base reflectance are optimized; the extent
/// `w x h` and the in-plane angle `theta` are fixed at initialization. The
/// in-plane axes are a deterministic function of the (unit) normal and
/// `theta`, so they rotate rigidly as the normal is refined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionPlane {
    /// Rectangle center in world units.
    pub center: Vector3<f64>,
    /// Raw normal; renormalized on use and after optimizer steps.
    pub normal: Vector3<f64>,
    /// Rectangle extent along the first / second in-plane axis.
    pub width: f64,
    pub height: f64,
    /// In-plane rotation of the rectangle relative to the canonical frame
    /// derived from the normal. Fixed after initialization.
    pub theta: f64,
    /// Pre-sigmoid base reflectance (Schlick R0).
    pub r0_logit: f64,
}

impl ReflectionPlane {
    pub fn new(center: Vector3<f64>, normal: Vector3<f64>, width: f64, height: f64, theta: f64, r0_logit: f64) -> Self {
        ReflectionPlane { center, normal, width, height, theta, r0_logit }
    }

    pub fn unit_normal(&self) -> Vector3<f64> {
        self.normal.normalize()
    }

    pub fn r0(&self) -> f64 {
        sigmoid(self.r0_logit)
    }

    /// Orthonormal in-plane axes spanning the rectangle; both perpendicular
    /// to the normal and to each other.
    pub fn axes(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.unit_normal();
        let (a1, a2) = gram_schmidt_frame(&n);
        let (s, c) = self.theta.sin_cos();
        (c * a1 + s * a2, -s * a1 + c * a2)
    }

    /// Signed distance of a point to the plane (positive on the normal side).
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.center).dot(&self.unit_normal())
    }

    /// Whether `p` projects inside the rectangle (orthogonal projection).
    pub fn contains_projection(&self, p: &Vector3<f64>) -> bool {
        let (u, v) = self.axes();
        let d = p - self.center;
        d.dot(&u).abs() <= 0.5 * self.width && d.dot(&v).abs() <= 0.5 * self.height
    }
}

/// Canonical right-handed in-plane frame for a unit normal (branchless
/// orthonormal-basis construction). Unlike picking the least-aligned world
/// axis, this is stable under tiny normal perturbations around the common
/// axis-aligned case; its only discontinuity is at grazing normals
/// (n.z = 0), which optimization never crosses for a pane facing the
/// cameras.
pub fn gram_schmidt_frame(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let s = 1.0f64.copysign(n.z);
    let a = -1.0 / (s + n.z);
    let b = n.x * n.y * a;
    let a1 = Vector3::new(1.0 + s * n.x * n.x * a, s * b, -s * n.x);
    let a2 = Vector3::new(b, s + n.y * n.y * a, -n.y);
    (a1, a2)
}
