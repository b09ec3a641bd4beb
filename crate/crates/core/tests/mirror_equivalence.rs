//! Render-equivalence oracle: splatting the mirrored Gaussians from the
//! original camera must equal splatting the primaries from the mirrored
//! camera, up to the horizontal image flip that restores handedness.

mod common;

use nalgebra::{Matrix3, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use trsplat::raster::{composite_reflection, prepare_view, SplatKind, WorldSplat};
use trsplat::reflection::{mirror_gaussians, mirror_point, reflection_matrix};
use trsplat::scene::{logit, sh, Camera, Gaussian, GaussianScene, ImageBuffer, ReflectionPlane};

/// Camera that observes the scene through the mirror: center and axes
/// reflected, with a parity flip about the camera x axis to stay a proper
/// rotation. Pixel (x, y) of the mirrored camera shows pixel (W-1-x, y) of
/// the mirrored-set render.
fn mirrored_camera(cam: &Camera, plane: &ReflectionPlane) -> Camera {
    let n = plane.unit_normal();
    let f = reflection_matrix(&n);
    let parity = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
    let rotation = parity * cam.rotation * f;
    let center = mirror_point(&cam.center(), plane);
    let translation = -rotation * center;
    Camera { rotation, translation, ..cam.clone() }
}

fn flip_x(img: &ImageBuffer) -> ImageBuffer {
    let mut out = ImageBuffer::new(img.width, img.height, img.channels);
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                out.set(x, y, c, img.get(img.width - 1 - x, y, c));
            }
        }
    }
    out
}

fn refl_inputs(scene: &GaussianScene, set: &trsplat::reflection::MirroredGaussianSet, plane: &ReflectionPlane, cam: &Camera) -> Vec<WorldSplat> {
    let n = plane.unit_normal();
    let f = reflection_matrix(&n);
    let c = cam.center();
    set.items
        .iter()
        .map(|mi| {
            let g = &scene.gaussians[mi.source as usize];
            let v = (mi.position - c).normalize();
            let d_hat = f * v;
            WorldSplat {
                position: mi.position,
                cov: f * g.covariance() * f,
                opacity: g.opacity(),
                color: sh::eval_color(scene.sh_degree, &g.sh, [d_hat.x, d_hat.y, d_hat.z]),
                mask_value: 0.0,
                intensity: g.refl_intensity,
                kind: SplatKind::Primary,
            }
        })
        .collect()
}

fn primary_inputs(scene: &GaussianScene, cam: &Camera, only: &[u32]) -> Vec<WorldSplat> {
    let c = cam.center();
    only.iter()
        .map(|&i| {
            let g = &scene.gaussians[i as usize];
            let dir = (g.position - c).normalize();
            WorldSplat {
                position: g.position,
                cov: g.covariance(),
                opacity: g.opacity(),
                color: sh::eval_color(scene.sh_degree, &g.sh, [dir.x, dir.y, dir.z]),
                mask_value: 0.0,
                intensity: g.refl_intensity,
                kind: SplatKind::Primary,
            }
        })
        .collect()
}

#[test]
fn mirrored_set_matches_mirrored_camera() {
    let mut rng = StdRng::seed_from_u64(1234);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let mut scene = GaussianScene::new(1);
        let n_sh = scene.n_sh_coeffs();
        for _ in 0..3 {
            let mut g = Gaussian::unit(n_sh);
            g.position = Vector3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(0.3..1.4));
            g.rotation = common::random_unit_quat(&mut rng);
            g.log_scale = Vector3::new(
                rng.gen_range(0.05f64..0.25).ln(),
                rng.gen_range(0.05f64..0.25).ln(),
                rng.gen_range(0.05f64..0.25).ln(),
            );
            g.opacity_logit = logit(rng.gen_range(0.3..0.9));
            for k in 0..n_sh {
                for c in 0..3 {
                    g.sh[k][c] = if k == 0 { rng.gen_range(-0.3..0.8) } else { rng.gen_range(-0.15..0.15) };
                }
            }
            scene.gaussians.push(g);
        }
        let plane = ReflectionPlane::new(
            Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.1..0.1)),
            Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 1.0),
            2.0,
            2.0,
            0.0,
            0.0,
        );
        let az: f64 = rng.gen_range(-0.6..0.6);
        let el: f64 = rng.gen_range(0.2..0.8);
        let r = 2.5;
        let eye = Vector3::new(r * el.cos() * az.sin(), r * el.sin(), r * el.cos() * az.cos());
        let cam = Camera::look_at(28.0, 24, 24, eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0));

        let set = mirror_gaussians(&scene, &plane, 0, &cam);
        if set.items.is_empty() {
            continue;
        }
        let inputs_m = refl_inputs(&scene, &set, &plane, &cam);
        let prep_m = prepare_view(&inputs_m, &cam);
        let img_mirrored = composite_reflection(&prep_m).color_raw;

        let cam2 = mirrored_camera(&cam, &plane);
        let sources: Vec<u32> = set.items.iter().map(|m| m.source).collect();
        let inputs_p = primary_inputs(&scene, &cam2, &sources);
        let prep_p = prepare_view(&inputs_p, &cam2);
        let img_primary = composite_reflection(&prep_p).color_raw;

        let err = img_mirrored.max_abs_diff(&flip_x(&img_primary));
        worst = worst.max(err);
        assert!(err < 1e-6, "case {case}: per-pixel error {err}");
    }
    println!("render-equivalence worst per-pixel error: {worst:.3e}");
}

#[test]
fn mirror_sidedness() {
    // All primaries behind the plane relative to the camera: empty set.
    let mut scene = GaussianScene::new(0);
    let mut g = Gaussian::unit(1);
    g.position = Vector3::new(0.0, 0.0, -1.0);
    scene.gaussians.push(g.clone());
    let plane = ReflectionPlane::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0), 1.0, 1.0, 0.0, 0.0);
    let cam = Camera::look_at(20.0, 8, 8, Vector3::new(0.0, 0.0, 2.0), Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0));
    assert!(mirror_gaussians(&scene, &plane, 0, &cam).items.is_empty());

    // One in front: exactly one mirrored Gaussian at the mirrored center.
    scene.gaussians[0].position = Vector3::new(0.2, 0.1, 0.7);
    let set = mirror_gaussians(&scene, &plane, 0, &cam);
    assert_eq!(set.items.len(), 1);
    approx::assert_relative_eq!(
        set.items[0].position,
        mirror_point(&scene.gaussians[0].position, &plane),
        epsilon = 1e-14
    );

    // Glass Gaussians are never mirrored.
    scene.gaussians[0].glass_plane = Some(0);
    assert!(mirror_gaussians(&scene, &plane, 0, &cam).items.is_empty());
}
