//! Serialization: scene PLY, plane JSON sidecars, float (PFM) and PNG
//! images, dataset manifests and optimizer state.

mod images;
mod ply;

pub use images::{read_mask_png, read_pfm, read_rgb_png, write_gray16_png, write_mask_png, write_pfm, write_rgb16_png, write_rgb8_png};
pub use ply::{read_scene_ply, read_seed_points_ply, write_scene_ply, write_seed_points_ply};

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::plane_init::Material;
use crate::scene::{Camera, ReflectionPlane};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

/// Reflection-plane sidecar entry. Axes are redundant with
/// (normal, theta) and stored for easy consumption by other tools.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneJson {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub axes: [[f64; 3]; 2],
    pub width: f64,
    pub height: f64,
    pub theta: f64,
    pub r0_logit: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanesSidecar {
    pub planes: Vec<PlaneJson>,
    pub materials: Vec<Material>,
}

impl PlaneJson {
    pub fn from_plane(p: &ReflectionPlane) -> Self {
        let (u, v) = p.axes();
        PlaneJson {
            center: [p.center.x, p.center.y, p.center.z],
            normal: [p.normal.x, p.normal.y, p.normal.z],
            axes: [[u.x, u.y, u.z], [v.x, v.y, v.z]],
            width: p.width,
            height: p.height,
            theta: p.theta,
            r0_logit: p.r0_logit,
        }
    }

    pub fn to_plane(&self) -> ReflectionPlane {
        ReflectionPlane::new(
            Vector3::from_column_slice(&self.center),
            Vector3::from_column_slice(&self.normal),
            self.width,
            self.height,
            self.theta,
            self.r0_logit,
        )
    }
}

pub fn write_planes_json(path: &Path, planes: &[ReflectionPlane], materials: &[Material]) -> Result<(), IoError> {
    let sidecar = PlanesSidecar {
        planes: planes.iter().map(PlaneJson::from_plane).collect(),
        materials: materials.to_vec(),
    };
    let mut f = fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(())
}

pub fn read_planes_json(path: &Path) -> Result<(Vec<ReflectionPlane>, Vec<Material>), IoError> {
    let sidecar: PlanesSidecar = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok((sidecar.planes.iter().map(PlaneJson::to_plane).collect(), sidecar.materials))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera transform, row-major 4x4.
    pub w2c: [[f64; 4]; 4],
}

impl CameraJson {
    pub fn from_camera(c: &Camera) -> Self {
        let mut w2c = [[0.0; 4]; 4];
        for r in 0..3 {
            for k in 0..3 {
                w2c[r][k] = c.rotation[(r, k)];
            }
            w2c[r][3] = c.translation[r];
        }
        w2c[3][3] = 1.0;
        CameraJson { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, width: c.width, height: c.height, w2c }
    }

    pub fn to_camera(&self) -> Camera {
        let mut rot = Matrix3::zeros();
        for r in 0..3 {
            for k in 0..3 {
                rot[(r, k)] = self.w2c[r][k];
            }
        }
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            rot,
            Vector3::new(self.w2c[0][3], self.w2c[1][3], self.w2c[2][3]),
        )
    }
}

/// Dataset index: intrinsics/poses, split, annotations, plane classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub cameras: Vec<CameraJson>,
    pub train_views: Vec<usize>,
    pub test_views: Vec<usize>,
    /// Views with a mask file under `masks/`.
    pub annotated_views: Vec<usize>,
    pub n_plane_classes: usize,
    pub materials: Vec<Material>,
    /// Diagonal of the seed-point bounding box.
    pub scene_extent: f64,
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<(), IoError> {
    fs::write(path, serde_json::to_string_pretty(m)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, IoError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Adam moment buffers for every parameter class, serialized as raw
/// little-endian f64 streams.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerStateBlob {
    pub step_counts: Vec<u64>,
    pub buffers: Vec<Vec<f64>>,
}

const OPT_MAGIC: &[u8; 8] = b"TRSOPT1\n";

pub fn write_optimizer_state(path: &Path, blob: &OptimizerStateBlob) -> Result<(), IoError> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(OPT_MAGIC);
    out.extend_from_slice(&(blob.step_counts.len() as u64).to_le_bytes());
    for s in &blob.step_counts {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&(blob.buffers.len() as u64).to_le_bytes());
    for b in &blob.buffers {
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_optimizer_state(path: &Path) -> Result<OptimizerStateBlob, IoError> {
    let data = fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], IoError> {
        if *pos + n > data.len() {
            return Err(IoError::Malformed { what: "optimizer state", detail: "truncated".into() });
        }
        let s = &data[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != OPT_MAGIC {
        return Err(IoError::Malformed { what: "optimizer state", detail: "bad magic".into() });
    }
    let n_steps = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut step_counts = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        step_counts.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
    }
    let n_buf = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut buffers = Vec::with_capacity(n_buf);
    for _ in 0..n_buf {
        let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let mut b = Vec::with_capacity(len);
        for _ in 0..len {
            b.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        buffers.push(b);
    }
    Ok(OptimizerStateBlob { step_counts, buffers })
}
