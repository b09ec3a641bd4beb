//! Three-stage optimization: transmission-only warmup with plane
//! initialization at its end, reflection-blocked plane adjustment, then
//! joint refinement with opacity perturbation.

mod adam;
mod densify;

pub use adam::{AdamParam, AdamState};
pub use densify::{densify_and_prune, DensifyConfig, DensifyStats};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::harness::{psnr, Dataset};
use crate::io;
use crate::losses::{view_loss, LossWeights, ViewLossConfig};
use crate::plane_init::{self, AnnotatedView, PlaneInitError};
use crate::reflection::{render_view, render_view_backward, RenderOptions};
use crate::scene::{logit, quat_normalize, sh, sigmoid, Gaussian, GaussianScene, GradientSet, ReflectionPlane};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("plane initialization failed: {0}")]
    PlaneInit(#[from] PlaneInitError),
    #[error("dataset has no annotated views for plane initialization")]
    NoAnnotatedViews,
    #[error("plane init mode requires ground truth, but the dataset has none")]
    MissingGroundTruth,
    #[error(transparent)]
    Io(#[from] io::IoError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearningRates {
    /// Position LR, multiplied by the scene extent and decayed
    /// exponentially to `position * position_final_ratio`.
    pub position: f64,
    pub position_final_ratio: f64,
    pub sh: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub glass_mask: f64,
    pub intensity: f64,
    /// Plane center LR, multiplied by the scene extent.
    pub plane_center: f64,
    pub plane_normal: f64,
    pub plane_r0: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final_ratio: 0.01,
            sh: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            glass_mask: 5e-2,
            intensity: 5e-3,
            plane_center: 1e-4,
            plane_normal: 1e-3,
            plane_r0: 5e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub period: usize,
    pub amplitude: f64,
    /// Opacity clamp margin after perturbation.
    pub eps: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { period: 1000, amplitude: 0.4, eps: 1e-3 }
    }
}

/// Ablation switches mirroring the paper's studies.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_depth_var: bool,
    pub no_grad_conflict: bool,
    pub no_perturbation: bool,
    pub no_intensity_map: bool,
    pub no_schlick: bool,
    pub skip_stage2: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PlaneInitMode {
    /// Estimate planes from the annotated masks at the end of stage 1.
    FromMasks,
    /// Start from the ground-truth planes perturbed by the given normal
    /// angle (degrees) and center offset (fraction of the scene extent).
    GroundTruthPerturbed { normal_deg: f64, center_frac: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub sh_degree: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub stage3_iters: usize,
    pub weights: LossWeights,
    pub lr: LearningRates,
    pub densify: DensifyConfig,
    pub perturb: PerturbConfig,
    pub plane_init: PlaneInitMode,
    pub glass_seed_count: usize,
    pub ablation: Ablation,
    /// Initial opacity of seed Gaussians.
    pub seed_opacity: f64,
    /// Evaluate PSNR on the first test view every this many iterations
    /// (0 disables).
    pub eval_interval: usize,
    /// Write intermediate checkpoints every this many iterations
    /// (0: final state only).
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            sh_degree: 3,
            stage1_iters: 3000,
            stage2_iters: 3000,
            stage3_iters: 24_000,
            weights: LossWeights::default(),
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
            perturb: PerturbConfig::default(),
            plane_init: PlaneInitMode::FromMasks,
            glass_seed_count: plane_init::GLASS_SEED_COUNT,
            ablation: Ablation::default(),
            seed_opacity: 0.1,
            eval_interval: 500,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_iters(&self) -> usize {
        self.stage1_iters + self.stage2_iters + self.stage3_iters
    }

    pub fn stage3_start(&self) -> usize {
        if self.ablation.skip_stage2 {
            self.stage1_iters
        } else {
            self.stage1_iters + self.stage2_iters
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    Three,
}

pub struct TrainState {
    pub iteration: usize,
    pub adam: AdamState,
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
    pub rng: ChaCha12Rng,
    pub skipped_nonfinite: usize,
    pub planes_ready: bool,
    /// Per plane: sign of the camera-opposite half-space, fixed at stage-3
    /// start for the perturbation selection.
    pub behind_sign: Vec<f64>,
    view_deck: Vec<usize>,
    deck_pos: usize,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub dataset: &'a Dataset,
    pub scene: GaussianScene,
    pub planes: Vec<ReflectionPlane>,
    pub state: TrainState,
    out_dir: Option<PathBuf>,
    csv: Option<fs::File>,
}

/// Initial Gaussians from seed points: DC color from the point color,
/// isotropic scale from the mean distance to the 3 nearest neighbors.
pub fn scene_from_seeds(
    seeds: &[(Vector3<f64>, [f64; 3])],
    sh_degree: usize,
    seed_opacity: f64,
) -> GaussianScene {
    let mut scene = GaussianScene::new(sh_degree);
    let n_sh = scene.n_sh_coeffs();
    let n = seeds.len();
    for (i, (pos, color)) in seeds.iter().enumerate() {
        let mut dists: Vec<f64> = Vec::with_capacity(n.saturating_sub(1));
        for (j, (q, _)) in seeds.iter().enumerate() {
            if i != j {
                dists.push((pos - q).norm_squared());
            }
        }
        dists.sort_by(f64::total_cmp);
        let k = dists.len().min(3);
        let mean3 = if k == 0 {
            0.1
        } else {
            dists.iter().take(k).map(|d| d.sqrt()).sum::<f64>() / k as f64
        };
        let scale = mean3.clamp(1e-4, 1.0);
        let mut g = Gaussian::unit(n_sh);
        g.position = *pos;
        g.log_scale = Vector3::from_element(scale.ln());
        g.opacity_logit = logit(seed_opacity);
        for c in 0..3 {
            g.sh[0][c] = (color[c] - 0.5) / sh::SH_C0;
        }
        scene.gaussians.push(g);
    }
    scene
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig, out_dir: Option<&Path>) -> Result<Self, TrainError> {
        let scene = scene_from_seeds(&dataset.seed_points, config.sh_degree, config.seed_opacity);
        Trainer::from_state(dataset, config, scene, Vec::new(), out_dir)
    }

    /// Start from an explicit scene (and optionally planes, which skips
    /// plane initialization and glass seeding).
    pub fn from_state(
        dataset: &'a Dataset,
        config: TrainConfig,
        scene: GaussianScene,
        planes: Vec<ReflectionPlane>,
        out_dir: Option<&Path>,
    ) -> Result<Self, TrainError> {
        let n = scene.len();
        let n_sh = scene.n_sh_coeffs();
        let planes_ready = !planes.is_empty();
        let csv = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(io::IoError::from)?;
                let mut f = fs::File::create(dir.join("log.csv")).map_err(io::IoError::from)?;
                writeln!(
                    f,
                    "iter,stage,view,l1,dssim,depth_var,grad_conflict,mask,total,n_gaussians,psnr_test,plane_normal_err_deg,plane_center_err,r0_err"
                )
                .map_err(io::IoError::from)?;
                Some(f)
            }
            None => None,
        };
        Ok(Trainer {
            state: TrainState {
                iteration: 0,
                adam: AdamState::new(n, n_sh, planes.len()),
                grad_accum: vec![0.0; n],
                grad_count: vec![0; n],
                rng: ChaCha12Rng::seed_from_u64(config.seed),
                skipped_nonfinite: 0,
                planes_ready,
                behind_sign: Vec::new(),
                view_deck: Vec::new(),
                deck_pos: 0,
            },
            config,
            dataset,
            scene,
            planes,
            out_dir: out_dir.map(Path::to_path_buf),
            csv,
        })
    }

    pub fn current_stage(&self) -> Stage {
        let it = self.state.iteration;
        if it < self.config.stage1_iters {
            Stage::One
        } else if !self.config.ablation.skip_stage2 && it < self.config.stage1_iters + self.config.stage2_iters {
            Stage::Two
        } else {
            Stage::Three
        }
    }

    fn next_view(&mut self) -> usize {
        if self.state.deck_pos >= self.state.view_deck.len() {
            self.state.view_deck = (0..self.dataset.train.len()).collect();
            // Fisher-Yates with the training RNG.
            for i in (1..self.state.view_deck.len()).rev() {
                let j = self.state.rng.gen_range(0..=i);
                self.state.view_deck.swap(i, j);
            }
            self.state.deck_pos = 0;
        }
        let v = self.state.view_deck[self.state.deck_pos];
        self.state.deck_pos += 1;
        v
    }

    fn render_options(&self, stage: Stage) -> RenderOptions {
        RenderOptions {
            enable_reflection: stage != Stage::One && self.state.planes_ready,
            block_reflection_to_gaussians: stage == Stage::Two,
            use_intensity_map: !self.config.ablation.no_intensity_map,
            use_schlick: !self.config.ablation.no_schlick,
        }
    }

    fn loss_weights(&self, stage: Stage) -> LossWeights {
        if stage == Stage::One {
            return self.config.weights.image_only();
        }
        let mut w = self.config.weights;
        if self.config.ablation.no_depth_var {
            w.depth_var = 0.0;
        }
        if self.config.ablation.no_grad_conflict {
            w.grad_conflict = 0.0;
        }
        w
    }

    /// Initialize reflection planes and seed their glass Gaussians. Runs at
    /// the end of stage 1; a no-op when planes were provided up front.
    pub fn init_planes(&mut self) -> Result<(), TrainError> {
        if self.state.planes_ready {
            return Ok(());
        }
        let mut planes = Vec::new();
        match self.config.plane_init {
            PlaneInitMode::FromMasks => {
                let annotated = self.dataset.annotated_train_views();
                if annotated.is_empty() {
                    return Err(TrainError::NoAnnotatedViews);
                }
                for class in 0..self.dataset.n_plane_classes {
                    let views: Vec<AnnotatedView> = annotated
                        .iter()
                        .map(|v| AnnotatedView {
                            view_id: v.view_id,
                            cam: v.cam.clone(),
                            mask: v.annotated.as_ref().unwrap()[class].clone(),
                        })
                        .collect();
                    let material = self.dataset.materials[class];
                    planes.push(plane_init::init_plane(&self.scene, &views, material, &mut self.state.rng)?);
                }
            }
            PlaneInitMode::GroundTruthPerturbed { normal_deg, center_frac } => {
                let gt = self.dataset.gt.as_ref().ok_or(TrainError::MissingGroundTruth)?;
                for (class, truth) in gt.planes.iter().enumerate() {
                    let mut p = truth.clone();
                    let n = p.unit_normal();
                    // Tilt around a deterministic in-plane axis, then shift
                    // the center along a random direction.
                    let (a1, a2) = crate::scene::gram_schmidt_frame(&n);
                    let phi: f64 = self.state.rng.gen_range(0.0..std::f64::consts::TAU);
                    let axis = phi.cos() * a1 + phi.sin() * a2;
                    let ang = normal_deg.to_radians();
                    let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), ang);
                    p.normal = rot * n;
                    let dir = {
                        let v = Vector3::new(
                            self.state.rng.gen_range(-1.0..1.0),
                            self.state.rng.gen_range(-1.0..1.0),
                            self.state.rng.gen_range(-1.0..1.0),
                        );
                        if v.norm() < 1e-6 {
                            Vector3::x()
                        } else {
                            v.normalize()
                        }
                    };
                    p.center += dir * (center_frac * self.dataset.scene_extent);
                    p.r0_logit = logit(self.dataset.materials[class].initial_r0());
                    planes.push(p);
                }
            }
        }

        let n_sh = self.scene.n_sh_coeffs();
        for (pi, plane) in planes.iter().enumerate() {
            let seeds = plane_init::seed_glass_gaussians(
                plane,
                pi as u16,
                n_sh,
                self.config.glass_seed_count,
                &mut self.state.rng,
            );
            self.scene.gaussians.extend(seeds);
        }
        // Extend optimizer/accumulator state for the new Gaussians.
        let old_n = self.state.grad_accum.len();
        let mapping: Vec<Option<usize>> = (0..self.scene.len()).map(|i| (i < old_n).then_some(i)).collect();
        self.state.adam.remap_gaussians(&mapping, n_sh);
        self.state.adam.resize_planes(planes.len());
        self.state.grad_accum = vec![0.0; self.scene.len()];
        self.state.grad_count = vec![0; self.scene.len()];
        self.planes = planes;
        self.state.planes_ready = true;
        Ok(())
    }

    fn position_lr(&self) -> f64 {
        let t = self.state.iteration as f64 / self.config.total_iters().max(1) as f64;
        self.config.lr.position
            * self.dataset.scene_extent
            * self.config.lr.position_final_ratio.powf(t)
    }

    fn apply_gradients(&mut self, gs: &GradientSet, stage: Stage) {
        let n = self.scene.len();
        let lr = &self.config.lr;
        // Gather into dense buffers, step, scatter back.
        let mut pos = vec![0.0; 3 * n];
        let mut rot = vec![0.0; 4 * n];
        let mut lsc = vec![0.0; 3 * n];
        let mut opa = vec![0.0; n];
        let n_sh = self.scene.n_sh_coeffs();
        let mut shv = vec![0.0; 3 * n_sh * n];
        let mut msk = vec![0.0; n];
        let mut inten = vec![0.0; n];
        let mut g_pos = vec![0.0; 3 * n];
        let mut g_rot = vec![0.0; 4 * n];
        let mut g_lsc = vec![0.0; 3 * n];
        let mut g_opa = vec![0.0; n];
        let mut g_sh = vec![0.0; 3 * n_sh * n];
        let mut g_msk = vec![0.0; n];
        let mut g_int = vec![0.0; n];
        for (i, g) in self.scene.gaussians.iter().enumerate() {
            for k in 0..3 {
                pos[3 * i + k] = g.position[k];
                g_pos[3 * i + k] = gs.position[i][k];
                lsc[3 * i + k] = g.log_scale[k];
                g_lsc[3 * i + k] = gs.log_scale[i][k];
            }
            for k in 0..4 {
                rot[4 * i + k] = g.rotation[k];
                g_rot[4 * i + k] = gs.rotation[i][k];
            }
            opa[i] = g.opacity_logit;
            g_opa[i] = gs.opacity_logit[i];
            msk[i] = g.glass_mask;
            g_msk[i] = gs.glass_mask[i];
            inten[i] = g.refl_intensity;
            g_int[i] = gs.refl_intensity[i];
            for k in 0..n_sh {
                for c in 0..3 {
                    shv[(i * n_sh + k) * 3 + c] = g.sh[k][c];
                    g_sh[(i * n_sh + k) * 3 + c] = gs.sh[i][k][c];
                }
            }
        }
        let pos_lr = self.position_lr();
        let st = &mut self.state.adam;
        st.position.step(&mut pos, &g_pos, pos_lr);
        st.rotation.step(&mut rot, &g_rot, lr.rotation);
        st.log_scale.step(&mut lsc, &g_lsc, lr.scale);
        st.opacity.step(&mut opa, &g_opa, lr.opacity);
        st.sh.step(&mut shv, &g_sh, lr.sh);
        st.glass_mask.step(&mut msk, &g_msk, lr.glass_mask);
        st.intensity.step(&mut inten, &g_int, lr.intensity);
        for (i, g) in self.scene.gaussians.iter_mut().enumerate() {
            for k in 0..3 {
                g.position[k] = pos[3 * i + k];
                g.log_scale[k] = lsc[3 * i + k].clamp(-14.0, 3.0);
            }
            let q = nalgebra::Vector4::new(rot[4 * i], rot[4 * i + 1], rot[4 * i + 2], rot[4 * i + 3]);
            if q != g.rotation {
                g.rotation = quat_normalize(&q);
            }
            g.opacity_logit = opa[i];
            g.glass_mask = msk[i].clamp(0.0, 1.0);
            g.refl_intensity = inten[i];
            for k in 0..n_sh {
                for c in 0..3 {
                    g.sh[k][c] = shv[(i * n_sh + k) * 3 + c];
                }
            }
        }

        if self.state.planes_ready && stage != Stage::One {
            let np = self.planes.len();
            let stage3 = stage == Stage::Three;
            let pose_scale = if stage3 { 0.1 } else { 1.0 };
            let mut ctr = vec![0.0; 3 * np];
            let mut nrm = vec![0.0; 3 * np];
            let mut r0 = vec![0.0; np];
            let mut g_ctr = vec![0.0; 3 * np];
            let mut g_nrm = vec![0.0; 3 * np];
            let mut g_r0 = vec![0.0; np];
            for (p, plane) in self.planes.iter().enumerate() {
                for k in 0..3 {
                    ctr[3 * p + k] = plane.center[k];
                    nrm[3 * p + k] = plane.normal[k];
                    g_ctr[3 * p + k] = gs.planes[p].center[k];
                    g_nrm[3 * p + k] = gs.planes[p].normal[k];
                }
                r0[p] = plane.r0_logit;
                g_r0[p] = gs.planes[p].r0_logit;
            }
            st.plane_center.step(&mut ctr, &g_ctr, lr.plane_center * self.dataset.scene_extent * pose_scale);
            st.plane_normal.step(&mut nrm, &g_nrm, lr.plane_normal * pose_scale);
            st.plane_r0.step(&mut r0, &g_r0, lr.plane_r0);
            for (p, plane) in self.planes.iter_mut().enumerate() {
                for k in 0..3 {
                    plane.center[k] = ctr[3 * p + k];
                }
                let nn = Vector3::new(nrm[3 * p], nrm[3 * p + 1], nrm[3 * p + 2]);
                if nn != plane.normal {
                    plane.normal = nn.normalize();
                }
                plane.r0_logit = r0[p];
            }
        }
    }

    /// Gaussians behind the plane whose centers project into the rectangle
    /// from at least one training view.
    pub fn perturbation_selection(&self) -> Vec<bool> {
        let mut sel = vec![false; self.scene.len()];
        for (pi, plane) in self.planes.iter().enumerate() {
            let n = plane.unit_normal();
            let behind = self.state.behind_sign.get(pi).copied().unwrap_or(-1.0);
            let (ax_u, ax_v) = plane.axes();
            for (i, g) in self.scene.gaussians.iter().enumerate() {
                if g.is_glass() || sel[i] {
                    continue;
                }
                let sd = (g.position - plane.center).dot(&n);
                if sd * behind <= 0.0 {
                    continue;
                }
                for view in &self.dataset.train {
                    let o = view.cam.center();
                    let d = g.position - o;
                    let denom = d.dot(&n);
                    if denom.abs() < 1e-12 {
                        continue;
                    }
                    let t = (plane.center - o).dot(&n) / denom;
                    if t <= 0.0 {
                        continue;
                    }
                    let hit = o + t * d - plane.center;
                    if hit.dot(&ax_u).abs() <= 0.5 * plane.width && hit.dot(&ax_v).abs() <= 0.5 * plane.height {
                        sel[i] = true;
                        break;
                    }
                }
            }
        }
        sel
    }

    /// Apply uniform opacity noise to the selected behind-plane Gaussians.
    pub fn apply_perturbation(&mut self) {
        let sel = self.perturbation_selection();
        let amp = self.config.perturb.amplitude;
        let eps = self.config.perturb.eps;
        for i in 0..self.scene.len() {
            if !sel[i] {
                continue;
            }
            let noise = self.state.rng.gen_range(-amp..amp);
            let o = (sigmoid(self.scene.gaussians[i].opacity_logit) + noise).clamp(eps, 1.0 - eps);
            self.scene.gaussians[i].opacity_logit = logit(o);
        }
    }

    /// Vanilla opacity clamp: cap every opacity at 0.01 and reset the
    /// opacity moments.
    fn apply_opacity_clamp(&mut self) {
        for (i, g) in self.scene.gaussians.iter_mut().enumerate() {
            let o = sigmoid(g.opacity_logit).min(0.01);
            g.opacity_logit = logit(o);
            self.state.adam.opacity.zero_item(i, 1);
        }
    }

    /// Fix the behind-plane half-space from the median training camera.
    pub fn fix_behind_signs(&mut self) {
        // Median training-camera position decides the "front" half-space.
        let mut xs: Vec<f64> = self.dataset.train.iter().map(|v| v.cam.center().x).collect();
        let mut ys: Vec<f64> = self.dataset.train.iter().map(|v| v.cam.center().y).collect();
        let mut zs: Vec<f64> = self.dataset.train.iter().map(|v| v.cam.center().z).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        zs.sort_by(f64::total_cmp);
        let mid = xs.len() / 2;
        let median = Vector3::new(xs[mid], ys[mid], zs[mid]);
        self.state.behind_sign = self
            .planes
            .iter()
            .map(|p| if (median - p.center).dot(&p.unit_normal()) >= 0.0 { -1.0 } else { 1.0 })
            .collect();
    }

    /// One optimization iteration. Returns the loss breakdown.
    pub fn step(&mut self) -> crate::losses::LossBreakdown {
        let stage = self.current_stage();
        let view_idx = self.next_view();
        let view = &self.dataset.train[view_idx];
        let opts = self.render_options(stage);
        let weights = self.loss_weights(stage);

        let fwd = render_view(&self.scene, &self.planes, &view.cam, &opts);
        let annotated: Option<&[crate::scene::ImageBuffer]> = if self.state.planes_ready {
            view.annotated.as_deref()
        } else {
            None
        };
        let cfg = ViewLossConfig {
            target: &view.image,
            annotated_masks: annotated,
            weights,
            pixel_mask: None,
            frozen_conflict_stencil: None,
        };
        let (parts, grads) = view_loss(&fwd, &cfg);
        let bw = render_view_backward(&self.scene, &self.planes, &view.cam, &opts, &fwd, &grads.upstream());

        if bw.grads.all_finite() {
            self.apply_gradients(&bw.grads, stage);
            // Densification statistics from the transmission pass.
            for i in 0..self.scene.len() {
                if bw.visible[i] {
                    self.state.grad_accum[i] += bw.screen_grad_ndc[i];
                    self.state.grad_count[i] += 1;
                }
            }
        } else {
            self.state.skipped_nonfinite += 1;
        }

        let it = self.state.iteration;
        let d = self.config.densify.clone();
        if it >= d.from_iter && it <= d.until_iter && d.interval > 0 && it % d.interval == 0 && it > 0 {
            let avg: Vec<f64> = self
                .state
                .grad_accum
                .iter()
                .zip(&self.state.grad_count)
                .map(|(a, c)| if *c > 0 { a / *c as f64 } else { 0.0 })
                .collect();
            let stats = densify_and_prune(&mut self.scene, &avg, &d, self.dataset.scene_extent, &mut self.state.rng);
            let n_sh = self.scene.n_sh_coeffs();
            self.state.adam.remap_gaussians(&stats.mapping, n_sh);
            self.state.grad_accum = vec![0.0; self.scene.len()];
            self.state.grad_count = vec![0; self.scene.len()];
        }

        // Interleaved opacity perturbation / vanilla clamping in stage 3.
        if stage == Stage::Three && self.state.planes_ready {
            let rel = it - self.config.stage3_start();
            let period = self.config.perturb.period;
            if period > 0 && rel % period == 0 {
                let window = rel / period;
                if window % 2 == 0 {
                    if !self.config.ablation.no_perturbation {
                        self.apply_perturbation();
                    }
                } else if it <= self.config.densify.until_iter {
                    self.apply_opacity_clamp();
                }
            }
        }

        self.log_row(stage, view_idx, &parts);
        self.state.iteration += 1;

        if self.config.checkpoint_interval > 0
            && self.state.iteration % self.config.checkpoint_interval == 0
        {
            let _ = self.write_checkpoint(&format!("iter_{:06}", self.state.iteration));
        }
        parts
    }

    fn log_row(&mut self, stage: Stage, view: usize, parts: &crate::losses::LossBreakdown) {
        if self.csv.is_none() {
            return;
        }
        let it = self.state.iteration;
        let mut psnr_s = String::new();
        let mut plane_s = String::from(",,");
        if self.config.eval_interval > 0 && it % self.config.eval_interval == 0 {
            if let Some(test) = self.dataset.test.first() {
                let opts = self.render_options(self.current_stage());
                let fwd = render_view(&self.scene, &self.planes, &test.cam, &opts);
                let p = psnr(&fwd.color.clamp01(), &test.image);
                psnr_s = if p.is_finite() { format!("{p:.4}") } else { "inf".into() };
            }
            if let Some(gt) = &self.dataset.gt {
                if self.state.planes_ready && !self.planes.is_empty() && !gt.planes.is_empty() {
                    let (n, c, r) = crate::harness::plane_errors(&self.planes[0], &gt.planes[0]);
                    plane_s = format!("{n:.5},{c:.6},{r:.6}");
                }
            }
        }
        let csv = self.csv.as_mut().unwrap();
        let stage_id = match stage {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        };
        let _ = writeln!(
            csv,
            "{it},{stage_id},{view},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{},{psnr_s},{plane_s}",
            parts.l1,
            parts.dssim,
            parts.depth_var,
            parts.grad_conflict,
            parts.mask,
            parts.total,
            self.scene.len(),
        );
    }

    pub fn run_stage1(&mut self) -> Result<(), TrainError> {
        for _ in 0..self.config.stage1_iters {
            self.step();
        }
        self.init_planes()
    }

    pub fn run_stage2(&mut self) {
        if self.config.ablation.skip_stage2 {
            return;
        }
        for _ in 0..self.config.stage2_iters {
            self.step();
        }
    }

    pub fn run_stage3(&mut self) {
        self.fix_behind_signs();
        let extra = if self.config.ablation.skip_stage2 { self.config.stage2_iters } else { 0 };
        for _ in 0..self.config.stage3_iters + extra {
            self.step();
        }
    }

    /// Full schedule, then the final checkpoint.
    pub fn run(&mut self) -> Result<(), TrainError> {
        self.run_stage1()?;
        self.run_stage2();
        self.run_stage3();
        if self.out_dir.is_some() {
            self.write_checkpoint("final")?;
        }
        Ok(())
    }

    /// Write `scene.ply`, `plane.json` and `optimizer.bin` under the run
    /// directory (prefixed for intermediate checkpoints).
    pub fn write_checkpoint(&self, tag: &str) -> Result<(), TrainError> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        let base = if tag == "final" {
            dir.clone()
        } else {
            let d = dir.join("checkpoints").join(tag);
            fs::create_dir_all(&d).map_err(io::IoError::from)?;
            d
        };
        io::write_scene_ply(&base.join("scene.ply"), &self.scene)?;
        io::write_planes_json(&base.join("plane.json"), &self.planes, &self.dataset.materials)?;
        io::write_optimizer_state(&base.join("optimizer.bin"), &self.state.adam.to_blob())?;
        Ok(())
    }
}
