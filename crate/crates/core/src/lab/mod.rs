//! Synthetic restoration experiments: distortions, patch sets, metrics, training,
//! and the ablation/histogram analyses.

mod analysis;
mod data;
mod distortion;
mod metrics;
mod optim;
mod pnm;
mod train;

pub use analysis::{ablation_study, feature_histogram, AblationRow, AblationTable, FeatureHistogram, HISTOGRAM_BINS};
pub use data::{synth_clean_patch, Patch, PatchSet, DEFAULT_PATCH_SIDE};
pub use distortion::{apply_distortion, gaussian_blur, DistortionSpec, Level, LevelRanges};
pub use metrics::{l1_distance, l1_loss, mse, psnr, ssim, PSNR_CAP, SSIM_WINDOW};
pub use optim::{cosine_lr, AdamState};
pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};
pub use train::{evaluate, mean_l1, train, Evaluation, TrainConfig, TrainReport};
