//! Adaptive-moment parameter updates over the scene's struct-of-fields
//! layout, with support for remapping buffers across densification.

use crate::io::OptimizerStateBlob;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct AdamParam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamParam {
    pub fn new(len: usize) -> Self {
        AdamParam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One Adam step over a dense value/gradient pair.
    pub fn step(&mut self, values: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(values.len(), self.m.len());
        debug_assert_eq!(values.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            values[i] -= lr * mh / (vh.sqrt() + EPS);
        }
    }

    /// Rebuild per-item buffers after densification: `mapping[new] = old`
    /// keeps that item's moments, `None` zeroes them. `dim` scalars per item.
    pub fn remap(&mut self, mapping: &[Option<usize>], dim: usize) {
        let mut m = vec![0.0; mapping.len() * dim];
        let mut v = vec![0.0; mapping.len() * dim];
        for (new, old) in mapping.iter().enumerate() {
            if let Some(old) = old {
                for k in 0..dim {
                    m[new * dim + k] = self.m[old * dim + k];
                    v[new * dim + k] = self.v[old * dim + k];
                }
            }
        }
        self.m = m;
        self.v = v;
    }

    pub fn zero_item(&mut self, item: usize, dim: usize) {
        for k in 0..dim {
            self.m[item * dim + k] = 0.0;
            self.v[item * dim + k] = 0.0;
        }
    }
}

/// All moment buffers of the trainable state.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub position: AdamParam,
    pub rotation: AdamParam,
    pub log_scale: AdamParam,
    pub opacity: AdamParam,
    pub sh: AdamParam,
    pub glass_mask: AdamParam,
    pub intensity: AdamParam,
    pub plane_center: AdamParam,
    pub plane_normal: AdamParam,
    pub plane_r0: AdamParam,
}

impl AdamState {
    pub fn new(n: usize, n_sh: usize, n_planes: usize) -> Self {
        AdamState {
            position: AdamParam::new(3 * n),
            rotation: AdamParam::new(4 * n),
            log_scale: AdamParam::new(3 * n),
            opacity: AdamParam::new(n),
            sh: AdamParam::new(3 * n_sh * n),
            glass_mask: AdamParam::new(n),
            intensity: AdamParam::new(n),
            plane_center: AdamParam::new(3 * n_planes),
            plane_normal: AdamParam::new(3 * n_planes),
            plane_r0: AdamParam::new(n_planes),
        }
    }

    pub fn remap_gaussians(&mut self, mapping: &[Option<usize>], n_sh: usize) {
        self.position.remap(mapping, 3);
        self.rotation.remap(mapping, 4);
        self.log_scale.remap(mapping, 3);
        self.opacity.remap(mapping, 1);
        self.sh.remap(mapping, 3 * n_sh);
        self.glass_mask.remap(mapping, 1);
        self.intensity.remap(mapping, 1);
    }

    pub fn resize_planes(&mut self, n_planes: usize) {
        self.plane_center = AdamParam::new(3 * n_planes);
        self.plane_normal = AdamParam::new(3 * n_planes);
        self.plane_r0 = AdamParam::new(n_planes);
    }

    pub fn to_blob(&self) -> OptimizerStateBlob {
        let params = self.all();
        OptimizerStateBlob {
            step_counts: params.iter().map(|p| p.t).collect(),
            buffers: params.iter().flat_map(|p| [p.m.clone(), p.v.clone()]).collect(),
        }
    }

    pub fn from_blob(blob: &OptimizerStateBlob) -> Option<Self> {
        if blob.step_counts.len() != 10 || blob.buffers.len() != 20 {
            return None;
        }
        let mut s = AdamState::default();
        for (i, p) in s.all_mut().into_iter().enumerate() {
            p.t = blob.step_counts[i];
            p.m = blob.buffers[2 * i].clone();
            p.v = blob.buffers[2 * i + 1].clone();
        }
        Some(s)
    }

    fn all(&self) -> [&AdamParam; 10] {
        [
            &self.position,
            &self.rotation,
            &self.log_scale,
            &self.opacity,
            &self.sh,
            &self.glass_mask,
            &self.intensity,
            &self.plane_center,
            &self.plane_normal,
            &self.plane_r0,
        ]
    }

    fn all_mut(&mut self) -> [&mut AdamParam; 10] {
        [
            &mut self.position,
            &mut self.rotation,
            &mut self.log_scale,
            &mut self.opacity,
            &mut self.sh,
            &mut self.glass_mask,
            &mut self.intensity,
            &mut self.plane_center,
            &mut self.plane_normal,
            &mut self.plane_r0,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_values_unchanged() {
        let mut p = AdamParam::new(3);
        let mut vals = [1.0, -2.0, 0.5];
        p.step(&mut vals, &[0.0; 3], 0.1);
        assert_eq!(vals, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn quadratic_converges_to_minimizer() {
        // f(x) = (x - 3)^2 / 2, grad = x - 3.
        let mut p = AdamParam::new(1);
        let mut x = [10.0f64];
        for _ in 0..2000 {
            let g = [x[0] - 3.0];
            p.step(&mut x, &g, 0.05);
        }
        assert!((x[0] - 3.0).abs() < 1e-6, "x = {}", x[0]);
    }

    #[test]
    fn remap_preserves_kept_moments() {
        let mut p = AdamParam::new(4);
        p.m = vec![1.0, 2.0, 3.0, 4.0];
        p.v = vec![5.0, 6.0, 7.0, 8.0];
        p.remap(&[Some(1), None, Some(0)], 2);
        assert_eq!(p.m, vec![3.0, 4.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(p.v, vec![7.0, 8.0, 0.0, 0.0, 5.0, 6.0]);
    }
}
