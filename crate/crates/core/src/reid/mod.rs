//! Supervised ReID training.

mod loss;
mod network;
mod sampler;
mod train;

pub use loss::{batch_hard_triplet, cross_entropy, reid_loss, ReidLoss, ReidLossParts};
pub use network::{ReidModelConfig, ReidNet};
pub use sampler::{BatchItem, IdentityPool, TrainBatch};
pub use train::{
    load_reid, train, ReidEpochStats, ReidRun, ReidTrainConfig, CHECKPOINT_FILE, CHECKPOINT_KIND, METRICS_FILE,
};
