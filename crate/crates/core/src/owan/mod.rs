//! A scaled-down multi-operation restoration network whose per-block fusion is a
//! tensor 1x1 convolution.

mod block;
mod net;
mod ops;

pub use block::{BlockCache, OwanBlock, DECOMPOSITION_LIMIT};
pub use net::{FusionConfig, MicroOwanNet, NetCache, NetConfig, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ops::{Conv2d, OpCache, OpKind, Operation};
