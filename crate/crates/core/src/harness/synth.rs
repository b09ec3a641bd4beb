//! Synthetic scene generation: a glass pane (or two side-by-side panes)
//! separating front-room content from behind-glass content, rendered with
//! exact ground truth through the engine's own forward path.

use nalgebra::{Vector3, Vector4};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::plane_init::Material;
use crate::reflection::{render_view, RenderOptions};
use crate::scene::{logit, sh, Camera, Gaussian, GaussianScene, ReflectionPlane};

use super::dataset::{Dataset, DatasetView, GroundTruth};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    /// Front-room Gaussians (the mirrored content).
    pub n_front: usize,
    /// Behind-glass Gaussians (the transmitted content).
    pub n_behind: usize,
    pub resolution: usize,
    pub focal: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_annotated: usize,
    /// Orbit radius range.
    pub radius: (f64, f64),
    /// Elevation range in degrees; sweeping low elevations produces grazing
    /// incidence and a strong Schlick signal.
    pub elevation_deg: (f64, f64),
    pub azimuth_deg: (f64, f64),
    pub plane_width: f64,
    pub plane_height: f64,
    /// Ground-truth base reflectance; 0 disables the reflective layer
    /// entirely (no glass Gaussians are placed, so R = 0).
    pub true_r0: f64,
    pub material: Material,
    pub n_planes: usize,
    /// Seed-point jitter as a fraction of the scene extent.
    pub seed_jitter_frac: f64,
    pub sh_degree: usize,
    /// Ground-truth glass Gaussian grid per pane.
    pub glass_grid: (usize, usize),
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 0,
            n_front: 110,
            n_behind: 90,
            resolution: 128,
            focal: 160.0,
            n_train: 60,
            n_test: 12,
            n_annotated: 6,
            radius: (2.9, 3.5),
            elevation_deg: (10.0, 55.0),
            azimuth_deg: (-62.0, 62.0),
            plane_width: 1.8,
            plane_height: 1.35,
            true_r0: 0.2,
            material: Material::Glass,
            n_planes: 1,
            seed_jitter_frac: 0.01,
            sh_degree: 1,
            glass_grid: (44, 33),
        }
    }
}

fn random_quat(rng: &mut impl Rng) -> Vector4<f64> {
    loop {
        let q = Vector4::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.3 {
            return q / n;
        }
    }
}

fn set_dc_color(g: &mut Gaussian, rgb: [f64; 3]) {
    for c in 0..3 {
        g.sh[0][c] = (rgb[c] - 0.5) / sh::SH_C0;
    }
}

fn scene_gaussian(
    rng: &mut impl Rng,
    n_sh: usize,
    position: Vector3<f64>,
    scale_range: (f64, f64),
    color: [f64; 3],
    opacity: f64,
) -> Gaussian {
    let mut g = Gaussian::unit(n_sh);
    g.position = position;
    g.rotation = random_quat(rng);
    let s0 = rng.gen_range(scale_range.0..scale_range.1).ln();
    let s1 = rng.gen_range(scale_range.0..scale_range.1).ln();
    let s2 = rng.gen_range(scale_range.0..scale_range.1).ln();
    g.log_scale = Vector3::new(s0, s1, s2);
    g.opacity_logit = logit(opacity);
    set_dc_color(&mut g, color);
    for k in 1..n_sh {
        for c in 0..3 {
            g.sh[k][c] = rng.gen_range(-0.12..0.12);
        }
    }
    g
}

/// Build the exact generating model.
fn build_ground_truth(spec: &SyntheticSceneSpec, rng: &mut ChaCha12Rng) -> (GaussianScene, Vec<ReflectionPlane>) {
    let mut scene = GaussianScene::new(spec.sh_degree);
    let n_sh = (spec.sh_degree + 1) * (spec.sh_degree + 1);

    // Panes: one centered, or two side by side sharing a normal.
    let mut planes = Vec::new();
    let gap = 0.25 * spec.plane_width;
    for p in 0..spec.n_planes {
        let cx = if spec.n_planes == 1 {
            0.0
        } else {
            (p as f64 - (spec.n_planes - 1) as f64 / 2.0) * (spec.plane_width + gap)
        };
        planes.push(ReflectionPlane::new(
            Vector3::new(cx, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            spec.plane_width,
            spec.plane_height,
            0.0,
            logit(spec.true_r0.clamp(1e-6, 1.0)),
        ));
    }
    let span_x = if spec.n_planes == 1 {
        spec.plane_width
    } else {
        spec.n_planes as f64 * (spec.plane_width + gap)
    };

    // Behind-glass content: scattered blobs plus a backdrop wall so the
    // transmission has full coverage through the panes.
    for _ in 0..spec.n_behind {
        let pos = Vector3::new(
            rng.gen_range(-0.55..0.55) * span_x,
            rng.gen_range(-0.45..0.45) * spec.plane_height,
            rng.gen_range(-1.3..-0.25),
        );
        let color = [rng.gen_range(0.15..0.9), rng.gen_range(0.15..0.9), rng.gen_range(0.15..0.9)];
        let op = rng.gen_range(0.55..0.95);
        scene.gaussians.push(scene_gaussian(rng, n_sh, pos, (0.035, 0.1), color, op));
    }
    let wall_cols = (8.0 * span_x / spec.plane_width) as usize;
    for iy in 0..6 {
        for ix in 0..wall_cols {
            let pos = Vector3::new(
                (ix as f64 / (wall_cols - 1) as f64 - 0.5) * 1.25 * span_x,
                (iy as f64 / 5.0 - 0.5) * 1.4 * spec.plane_height,
                -1.55 + rng.gen_range(-0.04..0.04),
            );
            let shade = rng.gen_range(0.25..0.55);
            let color = [shade, shade * rng.gen_range(0.85..1.1), shade * rng.gen_range(0.85..1.1)];
            let mut g = scene_gaussian(rng, n_sh, pos, (0.11, 0.16), color, 0.97);
            g.rotation = Vector4::new(1.0, 0.0, 0.0, 0.0);
            g.log_scale = Vector3::new((0.14f64).ln(), (0.14f64).ln(), (0.02f64).ln());
            scene.gaussians.push(g);
        }
    }

    // Front-room content: a ring of bright, high-contrast blobs that the
    // panes reflect; varied reflection intensity makes the intensity map
    // load-bearing.
    for i in 0..spec.n_front {
        let ang = i as f64 / spec.n_front as f64 * std::f64::consts::TAU;
        let rad = rng.gen_range(0.75..1.9);
        let pos = Vector3::new(
            ang.cos() * rad * 1.3,
            ang.sin() * rad * 0.75,
            rng.gen_range(0.5..2.1),
        );
        let strong = rng.gen_bool(0.5);
        let color = if strong {
            let hue = rng.gen_range(0..3);
            let mut c = [0.08, 0.08, 0.08];
            c[hue] = rng.gen_range(0.75..0.98);
            c[(hue + 1) % 3] = rng.gen_range(0.05..0.45);
            c
        } else {
            [rng.gen_range(0.2..0.95), rng.gen_range(0.2..0.95), rng.gen_range(0.2..0.95)]
        };
        let op = rng.gen_range(0.7..0.97);
        let mut g = scene_gaussian(rng, n_sh, pos, (0.04, 0.13), color, op);
        g.refl_intensity = rng.gen_range(0.65..1.45);
        scene.gaussians.push(g);
    }

    // Window frames: small bright Gaussians ringing each pane, on the plane
    // surface, anchoring plane estimation.
    for plane in &planes {
        let (ax_u, ax_v) = plane.axes();
        let per = 2.0 * (plane.width + plane.height);
        let n_frame = (per / 0.055) as usize;
        for k in 0..n_frame {
            let t = k as f64 / n_frame as f64 * 4.0;
            let (u, v) = match t as usize {
                0 => (t.fract() - 0.5, -0.5),
                1 => (0.5, t.fract() - 0.5),
                2 => (0.5 - t.fract(), 0.5),
                _ => (-0.5, 0.5 - t.fract()),
            };
            let margin = 1.0 + rng.gen_range(0.015..0.05);
            let pos = plane.center
                + u * plane.width * margin * ax_u
                + v * plane.height * margin * ax_v;
            let shade = rng.gen_range(0.75..0.95);
            let mut g = scene_gaussian(rng, n_sh, pos, (0.018, 0.032), [shade, shade * 0.95, shade * 0.85], 0.96);
            g.refl_intensity = 1.0;
            scene.gaussians.push(g);
        }
    }

    // Glass Gaussians: dense jittered grid saturating the mask inside each
    // pane. With true_r0 = 0 the reflective layer is absent entirely.
    if spec.true_r0 > 0.0 {
        for (pi, plane) in planes.iter().enumerate() {
            let (ax_u, ax_v) = plane.axes();
            let diag = (plane.width * plane.width + plane.height * plane.height).sqrt();
            let (nu, nv) = spec.glass_grid;
            for iu in 0..nu {
                for iv in 0..nv {
                    let u = (iu as f64 + rng.gen_range(0.2..0.8)) / nu as f64 - 0.5;
                    let v = (iv as f64 + rng.gen_range(0.2..0.8)) / nv as f64 - 0.5;
                    let mut g = Gaussian::unit(n_sh);
                    g.position = plane.center + u * plane.width * ax_u + v * plane.height * ax_v;
                    g.log_scale = Vector3::from_element((diag / 70.0).ln());
                    g.opacity_logit = logit(0.97);
                    g.glass_mask = 1.0;
                    g.glass_plane = Some(pi as u16);
                    scene.gaussians.push(g);
                }
            }
        }
    }

    (scene, planes)
}

fn orbit_camera(spec: &SyntheticSceneSpec, t: f64) -> Camera {
    let az = (spec.azimuth_deg.0 + (spec.azimuth_deg.1 - spec.azimuth_deg.0) * t).to_radians();
    let el_t = 0.5 - 0.5 * (4.0 * std::f64::consts::PI * t).cos();
    let el = (spec.elevation_deg.0 + (spec.elevation_deg.1 - spec.elevation_deg.0) * el_t).to_radians();
    let r_t = 0.5 - 0.5 * (6.0 * std::f64::consts::PI * t).cos();
    let r = spec.radius.0 + (spec.radius.1 - spec.radius.0) * r_t;
    let eye = Vector3::new(r * el.cos() * az.sin(), r * el.sin(), r * el.cos() * az.cos());
    Camera::look_at(
        spec.focal,
        spec.resolution,
        spec.resolution,
        eye,
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
    )
}

/// Generate the dataset in memory: ground-truth model, rendered train/test
/// images, exact hit masks on annotated views, jittered seed points.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Dataset {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let (scene, planes) = build_ground_truth(spec, &mut rng);

    let n_views = spec.n_train + spec.n_test;
    assert!(spec.n_test > 0 && spec.n_train > 0);
    let opts = RenderOptions::default();

    // Real (non-glass) centers drive the seed cloud and the scene extent.
    let real_centers: Vec<(Vector3<f64>, [f64; 3])> = scene
        .gaussians
        .iter()
        .filter(|g| !g.is_glass())
        .map(|g| {
            let rgb = [
                (0.5 + sh::SH_C0 * g.sh[0][0]).clamp(0.0, 1.0),
                (0.5 + sh::SH_C0 * g.sh[0][1]).clamp(0.0, 1.0),
                (0.5 + sh::SH_C0 * g.sh[0][2]).clamp(0.0, 1.0),
            ];
            (g.position, rgb)
        })
        .collect();
    let mut lo = Vector3::from_element(f64::INFINITY);
    let mut hi = Vector3::from_element(f64::NEG_INFINITY);
    for (p, _) in &real_centers {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let scene_extent = (hi - lo).norm();
    let jitter = spec.seed_jitter_frac * scene_extent;
    let mut seed_rng = StdRng::seed_from_u64(spec.seed ^ 0x5eed);
    let seed_points: Vec<(Vector3<f64>, [f64; 3])> = real_centers
        .iter()
        .map(|(p, c)| {
            let dx = seed_rng.gen_range(-jitter..jitter);
            let dy = seed_rng.gen_range(-jitter..jitter);
            let dz = seed_rng.gen_range(-jitter..jitter);
            let mut col = *c;
            for v in col.iter_mut() {
                *v = (*v + seed_rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0);
            }
            (p + Vector3::new(dx, dy, dz), col)
        })
        .collect();

    // Evenly interleaved test views; everything else trains.
    let test_ids: Vec<usize> = (0..spec.n_test)
        .map(|i| ((i as f64 + 0.5) * n_views as f64 / spec.n_test as f64) as usize)
        .collect();
    let train_ids: Vec<usize> = (0..n_views).filter(|i| !test_ids.contains(i)).collect();
    let ann_stride = train_ids.len() / spec.n_annotated.max(1);
    let annotated_ids: Vec<usize> = train_ids
        .iter()
        .copied()
        .step_by(ann_stride.max(1))
        .take(spec.n_annotated)
        .collect();

    let effective_planes: Vec<ReflectionPlane> = if spec.true_r0 > 0.0 { planes.clone() } else { Vec::new() };
    let render_one = |view_id: usize| -> DatasetView {
        let t = if n_views > 1 { view_id as f64 / (n_views - 1) as f64 } else { 0.5 };
        let cam = orbit_camera(spec, t);
        let fwd = render_view(&scene, &effective_planes, &cam, &opts);
        let image = fwd.color.clamp01();
        let annotated = if annotated_ids.contains(&view_id) {
            Some(planes.iter().map(|p| crate::reflection::hit_mask(p, &cam)).collect())
        } else {
            None
        };
        DatasetView { view_id, cam, image, annotated }
    };

    use rayon::prelude::*;
    let train: Vec<DatasetView> = train_ids.par_iter().map(|&v| render_one(v)).collect();
    let test: Vec<DatasetView> = test_ids.par_iter().map(|&v| render_one(v)).collect();

    Dataset {
        train,
        test,
        seed_points,
        n_plane_classes: planes.len(),
        materials: vec![spec.material; planes.len()],
        scene_extent,
        gt: Some(GroundTruth { scene, planes }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reflection::compose;

    fn small_spec() -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            seed: 7,
            n_front: 30,
            n_behind: 24,
            resolution: 48,
            focal: 60.0,
            n_train: 6,
            n_test: 2,
            n_annotated: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_r0_matches_transmission_only() {
        let spec = SyntheticSceneSpec { true_r0: 0.0, ..small_spec() };
        let ds = generate_synthetic(&spec);
        let gt = ds.gt.as_ref().unwrap();
        for v in ds.train.iter().take(2) {
            let fwd = render_view(&gt.scene, &[], &v.cam, &RenderOptions::default());
            assert_eq!(fwd.color.clamp01().data, v.image.data);
        }
    }

    #[test]
    fn same_seed_is_deterministic() {
        let spec = small_spec();
        let a = generate_synthetic(&spec);
        let b = generate_synthetic(&spec);
        assert_eq!(a.train[0].image.data, b.train[0].image.data);
        assert_eq!(a.seed_points, b.seed_points);
        assert_eq!(a.scene_extent, b.scene_extent);
    }

    #[test]
    fn head_on_pixel_blends_independent_branches() {
        // The stored image must equal (1-R) C_t + R C_r recomposed from the
        // independently rendered branch maps, including at the pane center.
        let spec = small_spec();
        let ds = generate_synthetic(&spec);
        let gt = ds.gt.as_ref().unwrap();
        let v = &ds.train[0];
        let fwd = render_view(&gt.scene, &gt.planes, &v.cam, &RenderOptions::default());
        let recomposed = compose(&fwd.trans.color, &fwd.refl_color, &fwd.strength);
        assert_eq!(recomposed.clamp01().data, v.image.data);
        // Center pixel sits on the pane: strength = Schlick * mask > 0.
        let c = spec.resolution / 2;
        assert!(fwd.strength.get(c, c, 0) > 0.1);
    }

    #[test]
    fn annotated_views_carry_exact_hit_masks() {
        let spec = small_spec();
        let ds = generate_synthetic(&spec);
        let gt = ds.gt.as_ref().unwrap();
        let annotated = ds.annotated_train_views();
        assert_eq!(annotated.len(), 3);
        for v in annotated {
            let masks = v.annotated.as_ref().unwrap();
            assert_eq!(masks.len(), 1);
            let expect = crate::reflection::hit_mask(&gt.planes[0], &v.cam);
            assert_eq!(masks[0].data, expect.data);
        }
    }
}
