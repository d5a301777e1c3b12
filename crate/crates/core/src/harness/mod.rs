//! Training loops, cross-validation, statistics and the classical baseline.

pub mod baseline;
pub mod cv;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod train;

pub use baseline::{baseline_experiment, baseline_lr, FeatureKind, LrConfig};
pub use cv::{kfold_experiment, learning_curve, make_folds, ExperimentConfig, FoldSpec, InitRecipe};
pub use metrics::{auc, welch_t_test};
pub use optim::Adam;
pub use report::{ExperimentReport, ReportEntry};
pub use train::{finetune, pretrain, TrainConfig};
