//! In-memory dataset plus the on-disk directory format:
//!
//! ```text
//! cameras.json            manifest (intrinsics, poses, split, annotations)
//! images/0000.png         16-bit RGB render (viewable)
//! images/0000.pfm         float32 render (lossless training target)
//! masks/0005.png          label mask, annotated views only
//! seed_points.ply         SfM stand-in points with colors
//! gt_scene.ply            ground-truth Gaussians (synthetic data only)
//! gt_plane.json           ground-truth planes (synthetic data only)
//! ```

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::io::{self, DatasetManifest, IoError};
use crate::plane_init::Material;
use crate::scene::{Camera, GaussianScene, ImageBuffer, ReflectionPlane};

#[derive(Debug, Clone)]
pub struct DatasetView {
    pub view_id: usize,
    pub cam: Camera,
    /// Target image, 3 channels in [0, 1].
    pub image: ImageBuffer,
    /// Per-plane-class binary masks, present on annotated views.
    pub annotated: Option<Vec<ImageBuffer>>,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub scene: GaussianScene,
    pub planes: Vec<ReflectionPlane>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<DatasetView>,
    pub test: Vec<DatasetView>,
    /// SfM stand-in seed points with colors.
    pub seed_points: Vec<(Vector3<f64>, [f64; 3])>,
    pub n_plane_classes: usize,
    pub materials: Vec<Material>,
    /// Diagonal of the seed-point bounding box.
    pub scene_extent: f64,
    /// Exact generating model, when synthetic.
    pub gt: Option<GroundTruth>,
}

impl Dataset {
    pub fn annotated_train_views(&self) -> Vec<&DatasetView> {
        self.train.iter().filter(|v| v.annotated.is_some()).collect()
    }
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<(), IoError> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;

    let all: Vec<&DatasetView> = ds.train.iter().chain(ds.test.iter()).collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by_key(|&i| all[i].view_id);

    let mut cameras = Vec::new();
    let mut train_views = Vec::new();
    let mut test_views = Vec::new();
    let mut annotated_views = Vec::new();
    for &i in &order {
        let v = all[i];
        cameras.push(io::CameraJson::from_camera(&v.cam));
    }
    for v in &ds.train {
        train_views.push(v.view_id);
        if v.annotated.is_some() {
            annotated_views.push(v.view_id);
        }
    }
    for v in &ds.test {
        test_views.push(v.view_id);
    }
    train_views.sort_unstable();
    test_views.sort_unstable();
    annotated_views.sort_unstable();

    for &i in &order {
        let v = all[i];
        io::write_rgb16_png(&dir.join(format!("images/{:04}.png", v.view_id)), &v.image)?;
        io::write_pfm(&dir.join(format!("images/{:04}.pfm", v.view_id)), &v.image)?;
        if let Some(masks) = &v.annotated {
            let (w, h) = (v.cam.width, v.cam.height);
            let mut labels = vec![0u8; w * h];
            for (k, m) in masks.iter().enumerate() {
                for (p, &val) in m.data.iter().enumerate() {
                    if val != 0.0 {
                        labels[p] = (k + 1) as u8;
                    }
                }
            }
            io::write_mask_png(&dir.join(format!("masks/{:04}.png", v.view_id)), &labels, w, h, ds.n_plane_classes)?;
        }
    }

    let manifest = DatasetManifest {
        cameras,
        train_views,
        test_views,
        annotated_views,
        n_plane_classes: ds.n_plane_classes,
        materials: ds.materials.clone(),
        scene_extent: ds.scene_extent,
    };
    io::write_manifest(&dir.join("cameras.json"), &manifest)?;
    io::write_seed_points_ply(&dir.join("seed_points.ply"), &ds.seed_points)?;
    if let Some(gt) = &ds.gt {
        io::write_scene_ply(&dir.join("gt_scene.ply"), &gt.scene)?;
        io::write_planes_json(&dir.join("gt_plane.json"), &gt.planes, &ds.materials)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let manifest = io::read_manifest(&dir.join("cameras.json"))?;
    let load_view = |view_id: usize| -> Result<DatasetView, IoError> {
        let cam = manifest.cameras[view_id].to_camera();
        let pfm = dir.join(format!("images/{view_id:04}.pfm"));
        let image = if pfm.is_file() {
            io::read_pfm(&pfm)?
        } else {
            io::read_rgb_png(&dir.join(format!("images/{view_id:04}.png")))?
        };
        let annotated = if manifest.annotated_views.contains(&view_id) {
            Some(io::read_mask_png(
                &dir.join(format!("masks/{view_id:04}.png")),
                manifest.n_plane_classes,
            )?)
        } else {
            None
        };
        Ok(DatasetView { view_id, cam, image, annotated })
    };

    let mut train = Vec::new();
    for &v in &manifest.train_views {
        train.push(load_view(v)?);
    }
    let mut test = Vec::new();
    for &v in &manifest.test_views {
        test.push(load_view(v)?);
    }
    let seed_points = io::read_seed_points_ply(&dir.join("seed_points.ply"))?;
    let gt = if dir.join("gt_scene.ply").is_file() {
        let scene = io::read_scene_ply(&dir.join("gt_scene.ply"))?;
        let (planes, _) = io::read_planes_json(&dir.join("gt_plane.json"))?;
        Some(GroundTruth { scene, planes })
    } else {
        None
    };
    Ok(Dataset {
        train,
        test,
        seed_points,
        n_plane_classes: manifest.n_plane_classes,
        materials: manifest.materials,
        scene_extent: manifest.scene_extent,
        gt,
    })
}
