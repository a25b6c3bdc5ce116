//! Loss, metrics, optimizer, schedule and the training loop.

pub mod fit;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod plan;

pub use fit::{evaluate, fit, log_csv, train_model, EpochLog, FitOutput, FoldResult, MetricReport, LOG_HEADER};
pub use loss::{bce_dice_loss, bce_with_logits};
pub use metrics::{binarize_logits, f1_iou, mean_var};
pub use optim::Adam;
pub use plan::{cosine_lr, split_folds, TrainPlan};
