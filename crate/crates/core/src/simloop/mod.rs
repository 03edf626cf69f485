//! Teacher-student training on synthetic scenes.

mod assign;
mod augment;
mod detector;
mod train;

pub use assign::{assign_targets, object_cells, plain_objects, POINT_RADIUS};
pub use augment::{augment, ema_update, symmetry_view, AugmentMode, EmaState, StrongAugment, SymmetryView};
pub use detector::ToyDetector;
pub use train::{
    evaluate, pretrain, resume, train, Checkpoint, IterationRecord, ReportSummary, Schedule,
    TrainConfig,
    TrainingReport,
};
