use nalgebra::{Vector3, Vector4};

use super::GaussianScene;

/// Gradient slots for one reflection plane's learnable parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlaneGrad {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub r0_logit: f64,
}

/// Accumulated gradients mirroring every learnable quantity of a scene and
/// its planes. Zeroed between optimizer steps.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub position: Vec<Vector3<f64>>,
    pub rotation: Vec<Vector4<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    pub opacity_logit: Vec<f64>,
    /// Coefficient-major, congruent with `Gaussian::sh`.
    pub sh: Vec<Vec<[f64; 3]>>,
    pub glass_mask: Vec<f64>,
    pub refl_intensity: Vec<f64>,
    pub planes: Vec<PlaneGrad>,
}

impl GradientSet {
    pub fn zeros(scene: &GaussianScene, n_planes: usize) -> Self {
        let n = scene.len();
        let n_sh = scene.n_sh_coeffs();
        GradientSet {
            position: vec![Vector3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            opacity_logit: vec![0.0; n],
            sh: vec![vec![[0.0; 3]; n_sh]; n],
            glass_mask: vec![0.0; n],
            refl_intensity: vec![0.0; n],
            planes: vec![PlaneGrad::default(); n_planes],
        }
    }

    pub fn zero_out(&mut self) {
        for v in &mut self.position {
            *v = Vector3::zeros();
        }
        for v in &mut self.rotation {
            *v = Vector4::zeros();
        }
        for v in &mut self.log_scale {
            *v = Vector3::zeros();
        }
        for v in &mut self.opacity_logit {
            *v = 0.0;
        }
        for sh in &mut self.sh {
            for c in sh.iter_mut() {
                *c = [0.0; 3];
            }
        }
        for v in &mut self.glass_mask {
            *v = 0.0;
        }
        for v in &mut self.refl_intensity {
            *v = 0.0;
        }
        for p in &mut self.planes {
            *p = PlaneGrad::default();
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.position.iter_mut().zip(&other.position) {
            *a += b;
        }
        for (a, b) in self.rotation.iter_mut().zip(&other.rotation) {
            *a += b;
        }
        for (a, b) in self.log_scale.iter_mut().zip(&other.log_scale) {
            *a += b;
        }
        for (a, b) in self.opacity_logit.iter_mut().zip(&other.opacity_logit) {
            *a += b;
        }
        for (a, b) in self.sh.iter_mut().zip(&other.sh) {
            for (ac, bc) in a.iter_mut().zip(b) {
                for c in 0..3 {
                    ac[c] += bc[c];
                }
            }
        }
        for (a, b) in self.glass_mask.iter_mut().zip(&other.glass_mask) {
            *a += b;
        }
        for (a, b) in self.refl_intensity.iter_mut().zip(&other.refl_intensity) {
            *a += b;
        }
        for (a, b) in self.planes.iter_mut().zip(&other.planes) {
            a.center += b.center;
            a.normal += b.normal;
            a.r0_logit += b.r0_logit;
        }
    }

    pub fn all_finite(&self) -> bool {
        let v3 = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        let v4 = |v: &Vector4<f64>| v.iter().all(|x| x.is_finite());
        self.position.iter().all(v3)
            && self.rotation.iter().all(v4)
            && self.log_scale.iter().all(v3)
            && self.opacity_logit.iter().all(|x| x.is_finite())
            && self.sh.iter().flatten().flatten().all(|x| x.is_finite())
            && self.glass_mask.iter().all(|x| x.is_finite())
            && self.refl_intensity.iter().all(|x| x.is_finite())
            && self.planes.iter().all(|p| v3(&p.center) && v3(&p.normal) && p.r0_logit.is_finite())
    }
}
