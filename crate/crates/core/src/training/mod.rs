//! Losses, batch sampling, optimization and the training loop.

mod adam;
mod batch;
mod loss;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use batch::{sample_batch, Batch};
pub use loss::{binomial_deviance_loss, contrastive_loss, loss, triplet_loss, LossConfig, LossKind};
pub use trainer::{train, train_step, EpochRecord, TrainConfig};
