//! Losses, optimiser, schedule, augmentation, patch sampling and the training loop.

pub mod adam;
pub mod augment;
pub mod data;
pub mod loss;
pub mod schedule;
pub mod trainer;

pub use adam::AdamState;
pub use augment::{compose, dihedral_augment, inverse_code, DIHEDRAL_CODES};
pub use data::{crop, Batch, Crop, ImageSet, PatchSampler};
pub use loss::{l1_loss, l2_loss, LossKind};
pub use schedule::lr_at;
pub use trainer::{LogRow, StepReport, TrainConfig, TrainState, Trainer};
