//! Experiment orchestration: configuration, training with per-epoch
//! validation and checkpointing, evaluation, prediction export, Grad-CAM and
//! the module ablation grid.

mod ablate;
mod checkpoint;
mod config;
mod gradcam;
mod predict;
mod train;

pub use ablate::{ablate, AblationRow, AblationTable, ABLATION_GRID};
pub use checkpoint::{load_checkpoint, save_checkpoint, BestMetric, Checkpoint};
pub use config::{DataConfig, OptimConfig, RunConfig};
pub use gradcam::{gradcam, overlay, write_gradcam, PathSelector};
pub use predict::{
    compare_color, comparison_image, export_predictions, metrics_from_dirs, COMPARE_DIR, FALSE_NEGATIVE,
    FALSE_POSITIVE, MASK_DIR, TRUE_NEGATIVE, TRUE_POSITIVE,
};
pub use train::{
    evaluate, predict_masks, train, EpochRecord, Predictions, TrainOutcome, BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG,
};
