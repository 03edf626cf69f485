//! Partial weakly-supervised oriented object detection on synthetic scenes.
//!
//! The crate covers oriented-box geometry and its Gaussian view, the loss
//! suite of the orientation/scale-aware student, watershed scale targets,
//! mixture-model pseudo-label filtering, the teacher-student training loop,
//! scene generation and AP evaluation.

pub mod annotation;
pub mod cpf;
pub mod dense;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod rng;
pub mod scale_targets;
pub mod scenes;
pub mod simloop;

pub use annotation::{Shape, WeakAnnotation, WeakForm};
pub use cpf::{CpfPolicy, CpfResult, ThresholdPolicy};
pub use dense::DensePrediction;
pub use error::{Error, Result};
pub use geometry::{normalize_angle, rotated_iou, Gaussian2, HBox, OrientedBox, Sym2};
