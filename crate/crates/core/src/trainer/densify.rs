//! 3DGS-style densification and pruning: clone small high-gradient
//! Gaussians, split large ones, prune transparent or oversized ones. Glass
//! Gaussians are exempt.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scene::GaussianScene;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensifyConfig {
    pub from_iter: usize,
    pub until_iter: usize,
    pub interval: usize,
    /// Threshold on the mean NDC positional gradient norm.
    pub grad_threshold: f64,
    /// Scales above this fraction of the scene extent split; below, clone.
    pub percent_dense: f64,
    pub min_opacity: f64,
    pub max_gaussians: usize,
    /// Prune Gaussians larger than this fraction of the scene extent.
    pub size_prune_frac: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            from_iter: 500,
            until_iter: 15_000,
            interval: 100,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            min_opacity: 0.005,
            max_gaussians: 50_000,
            size_prune_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DensifyStats {
    pub before: usize,
    pub after: usize,
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
    /// `mapping[new] = Some(old)` for survivors, `None` for children.
    pub mapping: Vec<Option<usize>>,
}

pub fn densify_and_prune(
    scene: &mut GaussianScene,
    avg_grad: &[f64],
    cfg: &DensifyConfig,
    scene_extent: f64,
    rng: &mut impl Rng,
) -> DensifyStats {
    let before = scene.len();
    let mut out = Vec::with_capacity(before);
    let mut mapping: Vec<Option<usize>> = Vec::with_capacity(before);
    let mut stats = DensifyStats { before, ..Default::default() };
    // The cap limits net additions; existing Gaussians are never dropped
    // just to satisfy it.
    let budget = cfg.max_gaussians.saturating_sub(before);
    let mut added = 0usize;

    for i in 0..before {
        let g = &scene.gaussians[i];
        if g.is_glass() {
            mapping.push(Some(i));
            out.push(g.clone());
            continue;
        }
        let scale = g.scale();
        let max_scale = scale.max();
        if g.opacity() < cfg.min_opacity || max_scale > cfg.size_prune_frac * scene_extent {
            stats.pruned += 1;
            continue;
        }
        let hot = avg_grad[i] > cfg.grad_threshold;
        if hot && added < budget {
            if max_scale > cfg.percent_dense * scene_extent {
                // Split: two children sampled from the Gaussian, scales / 1.6.
                let rot = g.rotation_matrix();
                for _ in 0..2 {
                    let xi = Vector3::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    );
                    let offset = rot * scale.component_mul(&xi);
                    let mut child = g.clone();
                    child.position += offset;
                    child.log_scale = g.log_scale.map(|l| l - 1.6f64.ln());
                    mapping.push(None);
                    out.push(child);
                }
                stats.split += 1;
                added += 1;
            } else {
                // Clone: keep the original and duplicate it in place.
                mapping.push(Some(i));
                out.push(g.clone());
                mapping.push(None);
                out.push(g.clone());
                stats.cloned += 1;
                added += 1;
            }
        } else {
            mapping.push(Some(i));
            out.push(g.clone());
        }
    }

    stats.after = out.len();
    stats.mapping = mapping;
    scene.gaussians = out;
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{logit, Gaussian};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn scene_with(gaussians: Vec<Gaussian>) -> GaussianScene {
        let mut s = GaussianScene::new(0);
        s.gaussians = gaussians;
        s
    }

    #[test]
    fn below_threshold_is_unchanged() {
        let mut g = Gaussian::unit(1);
        g.opacity_logit = logit(0.5);
        g.log_scale = Vector3::from_element((0.05f64).ln());
        let mut scene = scene_with(vec![g]);
        let stats = densify_and_prune(&mut scene, &[1e-5], &DensifyConfig::default(), 5.0, &mut StdRng::seed_from_u64(1));
        assert_eq!(stats.after, 1);
        assert_eq!(stats.mapping, vec![Some(0)]);
    }

    #[test]
    fn large_hot_gaussian_splits_into_two_smaller() {
        let mut g = Gaussian::unit(1);
        g.opacity_logit = logit(0.5);
        g.log_scale = Vector3::from_element((0.2f64).ln());
        let mut scene = scene_with(vec![g.clone()]);
        let stats =
            densify_and_prune(&mut scene, &[1e-2], &DensifyConfig::default(), 5.0, &mut StdRng::seed_from_u64(2));
        assert_eq!(stats.split, 1);
        assert_eq!(stats.after, 2);
        for child in &scene.gaussians {
            approx::assert_relative_eq!(child.scale().x, 0.2 / 1.6, epsilon = 1e-12);
        }
        assert_eq!(stats.mapping, vec![None, None]);
    }

    #[test]
    fn small_hot_gaussian_clones() {
        let mut g = Gaussian::unit(1);
        g.opacity_logit = logit(0.5);
        g.log_scale = Vector3::from_element((0.01f64).ln());
        let mut scene = scene_with(vec![g]);
        let stats =
            densify_and_prune(&mut scene, &[1e-2], &DensifyConfig::default(), 5.0, &mut StdRng::seed_from_u64(3));
        assert_eq!(stats.cloned, 1);
        assert_eq!(stats.after, 2);
        assert_eq!(scene.gaussians[0].position, scene.gaussians[1].position);
    }

    #[test]
    fn transparent_gaussian_is_pruned_but_glass_is_exempt() {
        let mut dim = Gaussian::unit(1);
        dim.opacity_logit = logit(0.001);
        let mut glass = dim.clone();
        glass.glass_plane = Some(0);
        let mut scene = scene_with(vec![dim, glass]);
        let stats = densify_and_prune(
            &mut scene,
            &[0.0, 0.0],
            &DensifyConfig::default(),
            5.0,
            &mut StdRng::seed_from_u64(4),
        );
        assert_eq!(stats.pruned, 1);
        assert_eq!(stats.after, 1);
        assert!(scene.gaussians[0].is_glass());
    }

    #[test]
    fn cap_limits_growth() {
        let mut g = Gaussian::unit(1);
        g.opacity_logit = logit(0.5);
        g.log_scale = Vector3::from_element((0.01f64).ln());
        let mut scene = scene_with(vec![g.clone(), g.clone(), g]);
        let cfg = DensifyConfig { max_gaussians: 4, ..Default::default() };
        let stats =
            densify_and_prune(&mut scene, &[1.0, 1.0, 1.0], &cfg, 5.0, &mut StdRng::seed_from_u64(5));
        assert!(stats.after <= 4, "after {}", stats.after);
    }
}
