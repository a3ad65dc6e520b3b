//! Tensor 1x1 convolutional layers: p-th order channel fusion with CP, tensor-train
//! and tensor-ring factorized kernels, plus a small multi-operation restoration
//! network and the tooling to train and analyse it.

pub mod error;
pub mod feature;
pub mod kernel;
pub mod lab;
pub mod layer;
pub mod owan;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use feature::FeatureMap;
pub use kernel::{init_kernel, KernelFormat, ScalePolicy, TnKernel, Workspace};
pub use layer::{Activation, T1clLayer};
pub use rng::{rng_uniform, Rng};
pub use tensor::{contract_last, outer_power, DenseTensor};
