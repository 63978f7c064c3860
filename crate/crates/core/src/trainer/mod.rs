//! Classifier training from scratch and last-layer fine-tuning.

mod classifier;
mod finetune;
mod loss;
mod scratch;

pub use classifier::{predict, split_accuracy, ClassifierCheckpoint, ClassifierInterface, EpochMetrics};
pub use finetune::{finetune_last_layer, mean_and_variance, FineTuneConfig, FineTuneReport, TrialResult};
pub use loss::{
    balanced_softmax_grad, balanced_softmax_loss, batch_loss_and_grad, cross_entropy_loss, log_prior, LossKind,
};
pub use scratch::{stream_log_prior, train_from_scratch, TrainConfig};

