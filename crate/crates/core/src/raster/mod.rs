//! Tile-based forward splatting and the matching reverse-mode pass.
//!
//! The raster layer works on *world splats*: position + covariance +
//! per-splat attributes, already resolved by the caller (view-dependent
//! color, mirroring, ...). It owns projection, depth sorting, tile binning,
//! alpha compositing and their exact adjoints. Gradients are returned at the
//! same world level (position, 3x3 covariance, activated opacity, color,
//! mask value, intensity); chaining into quaternions, log-scales, SH
//! coefficients or plane parameters is the caller's job.

mod backward;
mod forward;
mod project;

pub use backward::{
    composite_reflection_backward, composite_transmission_backward, ReflectionUpstream,
    TransmissionUpstream, WorldSplatGrad,
};
pub use forward::{
    composite_reflection, composite_transmission, depth_variance_sum, ReflectionRender,
    TransmissionRender,
};
pub use project::{prepare_view, project_splat, PreparedView, Splat2D};

use nalgebra::{Matrix3, Vector3};

/// Side length of a raster tile in pixels.
pub const TILE_SIZE: usize = 16;
/// Isotropic low-pass dilation added to every screen covariance (px^2).
pub const DILATION: f64 = 0.3;
/// Contributions with alpha below this are skipped in forward and backward.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Alpha is clamped here so the per-splat transmittance never reaches zero.
pub const ALPHA_MAX: f64 = 1.0 - 1e-6;
/// Per-pixel early-out once every transmittance chain drops below this.
pub const TRANS_EARLY_OUT: f64 = 1e-4;
/// Depth is reported as 0 where accumulated transmittance is below this.
pub const EPS_T: f64 = 1e-4;
/// Splats with center depth at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Squared-Mahalanobis cutoff for the bounding rectangle (exp(-6) ~ 3.5
/// sigma); alpha at this radius is already below `ALPHA_SKIP`.
pub const BBOX_Q: f64 = 12.0;
/// Upper bound on simultaneously rendered reflection planes.
pub const MAX_PLANES: usize = 4;

/// How a splat participates in the transmission pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplatKind {
    /// Renders into color/depth/transmittance and all mask chains.
    Primary,
    /// Renders only into the mask chain of the given plane.
    Glass(u16),
}

/// One world-space splat with resolved attributes.
#[derive(Debug, Clone)]
pub struct WorldSplat {
    pub position: Vector3<f64>,
    pub cov: Matrix3<f64>,
    /// Activated opacity in (0, 1).
    pub opacity: f64,
    pub color: [f64; 3],
    /// Glass-mask weight `m`.
    pub mask_value: f64,
    /// Reflection intensity `a` (used by the reflection pass).
    pub intensity: f64,
    pub kind: SplatKind,
}

impl WorldSplat {
    pub fn primary(position: Vector3<f64>, cov: Matrix3<f64>, opacity: f64, color: [f64; 3], mask_value: f64) -> Self {
        WorldSplat { position, cov, opacity, color, mask_value, intensity: 1.0, kind: SplatKind::Primary }
    }
}
