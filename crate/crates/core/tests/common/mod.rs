//! Shared fixtures for integration tests: seeded toy scenes and a
//! finite-difference gradient checker for the full render + loss pipeline.

use nalgebra::{Vector3, Vector4};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use trsplat::losses::{view_loss, LossWeights, ViewLossConfig};
use trsplat::reflection::{hit_mask, render_view, render_view_backward, RenderOptions};
use trsplat::scene::{logit, Camera, Gaussian, GaussianScene, GradientSet, ImageBuffer, ReflectionPlane};

pub struct ToyScene {
    pub scene: GaussianScene,
    pub planes: Vec<ReflectionPlane>,
    pub cam: Camera,
    pub target: ImageBuffer,
    pub annotated: Vec<ImageBuffer>,
    pub pixel_mask: ImageBuffer,
}

pub fn random_unit_quat(rng: &mut StdRng) -> Vector4<f64> {
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

fn random_gaussian(rng: &mut StdRng, position: Vector3<f64>, n_sh: usize) -> Gaussian {
    let mut g = Gaussian::unit(n_sh);
    g.position = position;
    g.rotation = random_unit_quat(rng);
    g.log_scale = Vector3::new(
        rng.gen_range(0.08f64..0.3).ln(),
        rng.gen_range(0.08f64..0.3).ln(),
        rng.gen_range(0.08f64..0.3).ln(),
    );
    g.opacity_logit = logit(rng.gen_range(0.25..0.9));
    for k in 0..n_sh {
        for c in 0..3 {
            g.sh[k][c] = if k == 0 { rng.gen_range(-0.4..0.8) } else { rng.gen_range(-0.1..0.1) };
        }
    }
    g.glass_mask = rng.gen_range(0.05..0.4);
    g.refl_intensity = rng.gen_range(0.6..1.4);
    g
}

/// Pixels more than one pixel away from the hit-mask boundary.
pub fn boundary_exclusion_mask(hit: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (hit.width, hit.height);
    let mut out = ImageBuffer::from_vec(w, h, 1, vec![1.0; w * h]);
    for y in 0..h {
        for x in 0..w {
            let v = hit.get(x, y, 0);
            let mut edge = false;
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let xx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    let yy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                    if hit.get(xx, yy, 0) != v {
                        edge = true;
                    }
                }
            }
            if edge {
                out.set(x, y, 0, 0.0);
            }
        }
    }
    out
}

/// Small randomized scene: <=20 Gaussians split across both sides of a
/// tilted reflection plane, a few glass Gaussians on the plane, and a target
/// rendered from a parameter-perturbed copy.
pub fn toy_scene(seed: u64, res: usize, n_primary: usize, n_glass: usize) -> ToyScene {
    let mut rng = StdRng::seed_from_u64(seed);
    let sh_degree = 1;
    let mut scene = GaussianScene::new(sh_degree);
    let n_sh = scene.n_sh_coeffs();

    let plane = ReflectionPlane::new(
        Vector3::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.1..0.1)),
        Vector3::new(rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25), 1.0),
        rng.gen_range(1.4..2.2),
        rng.gen_range(1.1..1.8),
        rng.gen_range(-0.5..0.5),
        logit(rng.gen_range(0.15..0.45)),
    );

    for i in 0..n_primary {
        let front = i % 2 == 0;
        let z = if front { rng.gen_range(0.35..1.5) } else { rng.gen_range(-1.5..-0.35) };
        let pos = Vector3::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.7..0.7), z);
        scene.gaussians.push(random_gaussian(&mut rng, pos, n_sh));
    }
    let (ax_u, ax_v) = plane.axes();
    for _ in 0..n_glass {
        let pos = plane.center
            + ax_u * rng.gen_range(-0.4..0.4) * plane.width
            + ax_v * rng.gen_range(-0.4..0.4) * plane.height;
        let mut g = random_gaussian(&mut rng, pos, n_sh);
        g.glass_plane = Some(0);
        g.glass_mask = rng.gen_range(0.6..0.95);
        scene.gaussians.push(g);
    }

    let az: f64 = rng.gen_range(-0.7..0.7);
    let el: f64 = rng.gen_range(0.3..0.9);
    let r = rng.gen_range(2.2..3.0);
    let eye = Vector3::new(r * el.cos() * az.sin(), r * el.sin(), r * el.cos() * az.cos());
    let cam = Camera::look_at(res as f64 * 1.15, res, res, eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0));

    // Target: render a perturbed copy through the same pipeline.
    let mut perturbed = scene.clone();
    for g in &mut perturbed.gaussians {
        g.position += Vector3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
        g.sh[0][0] += rng.gen_range(-0.15..0.15);
        g.sh[0][1] += rng.gen_range(-0.15..0.15);
        g.sh[0][2] += rng.gen_range(-0.15..0.15);
    }
    let planes = vec![plane];
    let fwd = render_view(&perturbed, &planes, &cam, &RenderOptions::default());
    let target = fwd.color.clamp01();

    let hit = hit_mask(&planes[0], &cam);
    let annotated = vec![hit.clone()];
    let pixel_mask = boundary_exclusion_mask(&hit);

    ToyScene { scene, planes, cam, target, annotated, pixel_mask }
}

/// Flattened view of every learnable parameter, for finite differencing.
pub fn collect_params(scene: &GaussianScene, planes: &[ReflectionPlane]) -> (Vec<f64>, Vec<String>) {
    let mut v = Vec::new();
    let mut names = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        for a in 0..3 {
            v.push(g.position[a]);
            names.push(format!("g{i}.position[{a}]"));
        }
        for a in 0..4 {
            v.push(g.rotation[a]);
            names.push(format!("g{i}.rotation[{a}]"));
        }
        for a in 0..3 {
            v.push(g.log_scale[a]);
            names.push(format!("g{i}.log_scale[{a}]"));
        }
        v.push(g.opacity_logit);
        names.push(format!("g{i}.opacity_logit"));
        for (k, c) in g.sh.iter().enumerate() {
            for ch in 0..3 {
                v.push(c[ch]);
                names.push(format!("g{i}.sh[{k}][{ch}]"));
            }
        }
        v.push(g.glass_mask);
        names.push(format!("g{i}.glass_mask"));
        v.push(g.refl_intensity);
        names.push(format!("g{i}.refl_intensity"));
    }
    for (p, plane) in planes.iter().enumerate() {
        for a in 0..3 {
            v.push(plane.center[a]);
            names.push(format!("p{p}.center[{a}]"));
        }
        for a in 0..3 {
            v.push(plane.normal[a]);
            names.push(format!("p{p}.normal[{a}]"));
        }
        v.push(plane.r0_logit);
        names.push(format!("p{p}.r0_logit"));
    }
    (v, names)
}

pub fn set_params(scene: &mut GaussianScene, planes: &mut [ReflectionPlane], v: &[f64]) {
    let mut i = 0;
    for g in &mut scene.gaussians {
        for a in 0..3 {
            g.position[a] = v[i];
            i += 1;
        }
        for a in 0..4 {
            g.rotation[a] = v[i];
            i += 1;
        }
        for a in 0..3 {
            g.log_scale[a] = v[i];
            i += 1;
        }
        g.opacity_logit = v[i];
        i += 1;
        for k in 0..g.sh.len() {
            for ch in 0..3 {
                g.sh[k][ch] = v[i];
                i += 1;
            }
        }
        g.glass_mask = v[i];
        i += 1;
        g.refl_intensity = v[i];
        i += 1;
    }
    for plane in planes.iter_mut() {
        for a in 0..3 {
            plane.center[a] = v[i];
            i += 1;
        }
        for a in 0..3 {
            plane.normal[a] = v[i];
            i += 1;
        }
        plane.r0_logit = v[i];
        i += 1;
    }
    assert_eq!(i, v.len());
}

pub fn flatten_grads(gs: &GradientSet) -> Vec<f64> {
    let mut v = Vec::new();
    for i in 0..gs.position.len() {
        for a in 0..3 {
            v.push(gs.position[i][a]);
        }
        for a in 0..4 {
            v.push(gs.rotation[i][a]);
        }
        for a in 0..3 {
            v.push(gs.log_scale[i][a]);
        }
        v.push(gs.opacity_logit[i]);
        for c in &gs.sh[i] {
            for ch in 0..3 {
                v.push(c[ch]);
            }
        }
        v.push(gs.glass_mask[i]);
        v.push(gs.refl_intensity[i]);
    }
    for p in &gs.planes {
        for a in 0..3 {
            v.push(p.center[a]);
        }
        for a in 0..3 {
            v.push(p.normal[a]);
        }
        v.push(p.r0_logit);
    }
    v
}

/// Detached conflict stencil at the base parameters, for FD oracles of the
/// stop-gradient loss.
pub fn base_conflict_stencil(toy: &ToyScene, opts: &RenderOptions) -> (ImageBuffer, ImageBuffer) {
    let fwd = render_view(&toy.scene, &toy.planes, &toy.cam, opts);
    trsplat::losses::conflict_stencil(&fwd.refl_color)
}

pub fn eval_total_loss(
    toy: &ToyScene,
    opts: &RenderOptions,
    weights: &LossWeights,
    frozen: Option<&(ImageBuffer, ImageBuffer)>,
) -> f64 {
    let fwd = render_view(&toy.scene, &toy.planes, &toy.cam, opts);
    let cfg = ViewLossConfig {
        target: &toy.target,
        annotated_masks: Some(&toy.annotated),
        weights: *weights,
        pixel_mask: Some(&toy.pixel_mask),
        frozen_conflict_stencil: frozen,
    };
    view_loss(&fwd, &cfg).0.total
}

pub fn analytic_gradients(toy: &ToyScene, opts: &RenderOptions, weights: &LossWeights) -> GradientSet {
    let fwd = render_view(&toy.scene, &toy.planes, &toy.cam, opts);
    let cfg = ViewLossConfig {
        target: &toy.target,
        annotated_masks: Some(&toy.annotated),
        weights: *weights,
        pixel_mask: Some(&toy.pixel_mask),
        frozen_conflict_stencil: None,
    };
    let (_, grads) = view_loss(&fwd, &cfg);
    render_view_backward(&toy.scene, &toy.planes, &toy.cam, opts, &fwd, &grads.upstream()).grads
}

pub struct GradCheckReport {
    pub checked: usize,
    pub failures: Vec<(String, f64, f64)>,
    pub max_rel_err: f64,
}

/// Central finite differences (step 1e-6) against the analytic gradient for
/// every learnable parameter. A pair passes when the relative error is below
/// 1e-4 or the absolute gap is below 1e-7 (64-bit FD noise floor).
///
/// The conflict loss's reflection stencil is frozen at the base parameters
/// so the differenced function realizes the stop-gradient semantics.
pub fn gradient_check(toy: &ToyScene, opts: &RenderOptions, weights: &LossWeights) -> GradCheckReport {
    let gs = analytic_gradients(toy, opts, weights);
    let analytic = flatten_grads(&gs);
    let (params, names) = collect_params(&toy.scene, &toy.planes);
    assert_eq!(params.len(), analytic.len());
    let frozen = base_conflict_stencil(toy, opts);

    let h = 1e-6;
    let mut failures = Vec::new();
    let mut max_rel = 0.0f64;
    let mut work = toy.clone_shallow();
    for i in 0..params.len() {
        let mut vp = params.clone();
        vp[i] += h;
        set_params(&mut work.scene, &mut work.planes, &vp);
        let fp = eval_total_loss(&work, opts, weights, Some(&frozen));
        vp[i] = params[i] - h;
        set_params(&mut work.scene, &mut work.planes, &vp);
        let fm = eval_total_loss(&work, opts, weights, Some(&frozen));
        let fd = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(fd.abs());
        let abs_err = (a - fd).abs();
        let rel = if denom > 0.0 { abs_err / denom } else { 0.0 };
        if denom >= 1e-5 {
            max_rel = max_rel.max(rel);
        }
        let ok = rel < 1e-4 || abs_err < 1e-7;
        if !ok {
            failures.push((names[i].clone(), a, fd));
        }
    }
    // Restore.
    set_params(&mut work.scene, &mut work.planes, &params);
    GradCheckReport { checked: params.len(), failures, max_rel_err: max_rel }
}

impl ToyScene {
    pub fn clone_shallow(&self) -> ToyScene {
        ToyScene {
            scene: self.scene.clone(),
            planes: self.planes.clone(),
            cam: self.cam.clone(),
            target: self.target.clone(),
            annotated: self.annotated.clone(),
            pixel_mask: self.pixel_mask.clone(),
        }
    }
}
