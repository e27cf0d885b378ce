//! Tri-planar 2D segmentation: the atrous-pyramid network, two-stage training,
//! augmentation and multi-scale inference.

mod augment;
mod config;
mod model;
mod predict;
mod train;

pub use augment::{augment, flip_lr, gaussian_blur, resize_image, resize_labels};
pub use config::{poly_lr, AsppConfig, AugmentationConfig, EncoderConfig, TrainSchedule};
pub use model::{build_backbone, SegCache, SegNet};
pub use predict::{predict_multiscale, predict_slices, LogitsMap, PlaneTag, ScoreMode, Variant};
pub use train::{loss_trace_hash, train, EpochRecord, LabeledSlice, TrainedModels};
