//! Completion and shape pre-training of the frame encoder.

mod decoder;
mod loss;
mod network;
mod run;

pub use decoder::{Completion, CompletionOutput, Decoder, DecoderCache, DecoderConfig, ShapeHead};
pub use loss::{completion_grad, completion_loss, delta_schedule, pretrain_loss, shape_loss, CompletionGrad};
pub use network::{LossParts, PretrainModelConfig, PretrainNet};
pub use run::{
    evaluate_pretraining, load_pretrained, run_pretraining, EpochStats, PretrainConfig, PretrainEval, PretrainRun,
    CHECKPOINT_FILE, CHECKPOINT_KIND, METRICS_FILE,
};
