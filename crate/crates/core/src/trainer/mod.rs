//! Two-stage optimization: geometry pretraining on prior-mesh SDF samples,
//! then joint photometric training, with deterministic batching and atomic
//! checkpointing.

mod checkpoint;
mod config;
mod joint;
mod pretrain;

pub use checkpoint::{flatten_params, unflatten_params, CheckpointMeta, ModelCheckpoint};
pub use config::{BudgetConfig, PriorSource, TrainConfig};
pub use joint::{downsample_rgb, latest_checkpoint, train_joint, JointReport};
pub use pretrain::{pretrain_bounds, pretrain_geometry, PretrainReport};
