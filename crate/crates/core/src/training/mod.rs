//! Denoising pretraining, two-page training and frozen-encoder finetuning.

pub mod checkpoint;
pub mod denoise;
pub mod optim;
pub mod steps;
pub mod trainer;

#[cfg(test)]
mod tests;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, group_digests, load_checkpoint, parse_header, save_checkpoint, BlobEntry,
    CheckpointHeader, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC,
};
pub use denoise::{corrupt_spans, make_denoise_example, reconstruct, DenoiseExample};
pub use optim::{adamw_update, AdamState, AdamWConfig};
pub use steps::{
    cache_encodings, denoise_loss, denoise_page_input, finetune_step, page_loss, pretrain_step, qa_losses, train_step,
    QaItem, QaLosses,
};
pub use trainer::{
    full_item, pretrain_pages, qa_sources, step_log_csv, two_page_item, PretrainPage, QaSource, Stage, StepRecord,
    TrainConfig, Trainer, STEP_LOG_HEADER,
};
