//! Losses, optimizers, the training step, checkpoints and the
//! cross-validation driver.

mod checkpoint;
mod eval;
mod fold;
mod loss;
mod optim;
mod step;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use eval::{evaluate, predict_logits, predict_masks, split_batch};
pub use fold::{fold_dir, plan_for, run_fold, run_training, FoldOutcome, LOSSES_HEADER, METRICS_HEADER};
pub use loss::{combined_loss, cross_entropy_loss, dice_loss, level_weights, mask_batch, LossConfig};
pub use optim::{global_norm, Algorithm, OptimConfig, OptimState};
pub use step::{first_non_finite, train_step, Batch, LossStats, TrainState};
