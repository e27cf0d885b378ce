//! Appearance transfer: a frozen VGG-pattern feature extractor, content and
//! Gram-matrix style losses, per-pixel gradient descent, and the choice of a
//! style target by label composition.

mod extractor;
mod loss;
mod select;
mod transfer;

pub use extractor::{ExtractorCache, ExtractorConfig, FeatureExtractor};
pub use loss::{content_loss, gram, style_loss, LossValue, Objective};
pub use select::{select_style_target, LabelFractionVector, SliceKey};
pub use transfer::{build_extractor, transfer, TransferConfig, TransferOutcome};
