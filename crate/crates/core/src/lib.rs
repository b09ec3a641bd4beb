//! CPU-based differentiable Gaussian splatting with learnable planar
//! reflections.
//!
//! The scene is a set of anisotropic 3D Gaussians plus one or more
//! rectangular reflection planes. Rendering blends a transmission image
//! (splatted Gaussians) with a reflection image (Gaussians mirrored across
//! the plane) using a Fresnel-weighted, mask-filtered reflection strength
//! map. Every map is differentiable back to the Gaussian and plane
//! parameters, so scenes can be fit to images by first-order optimization.
//!
//! Modules follow the pipeline:
//! - [`scene`]: domain types (Gaussians, planes, cameras, images) and shared
//!   math (spherical harmonics, covariance construction).
//! - [`raster`]: tile-parallel forward splatting and the matching
//!   reverse-mode pass.
//! - [`reflection`]: mirror transforms, hit masks, Schlick strength and
//!   composition.
//! - [`losses`]: image, depth-variance, gradient-conflict and mask losses
//!   with analytic gradients.
//! - [`plane_init`]: reflection-plane estimation from annotated masks
//!   (boundary extraction, RANSAC, rotating calipers) and glass seeding.
//! - [`trainer`]: the three-stage optimization schedule with
//!   densification, pruning and opacity perturbation.
//! - [`harness`]: synthetic dataset generation, metrics and evaluation.
//! - [`io`]: PLY / PNG / PFM / JSON serialization.

pub mod harness;
pub mod io;
pub mod losses;
pub mod plane_init;
pub mod raster;
pub mod reflection;
pub mod scene;
pub mod trainer;

pub use scene::{Camera, Gaussian, GaussianScene, GradientSet, ImageBuffer, ReflectionPlane};

/// Build the global rayon pool from the `TRSPLAT_THREADS` env var.
///
/// No-op if the pool was already initialized. Returns the effective number
/// of worker threads.
pub fn init_thread_pool_from_env() -> usize {
    if let Ok(v) = std::env::var("TRSPLAT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    rayon::current_num_threads()
}
