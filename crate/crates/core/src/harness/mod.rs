//! Synthetic datasets with exact ground truth, evaluation metrics, and the
//! dataset directory format.

mod dataset;
mod eval;
mod metrics;
mod synth;

pub use dataset::{load_dataset, save_dataset, Dataset, DatasetView, GroundTruth};
pub use eval::{evaluate, plane_errors, EvalReport, ViewMetrics};
pub use metrics::{psnr, ssim, PSNR_SENTINEL_MSE};
pub use synth::{generate_synthetic, SyntheticSceneSpec};
