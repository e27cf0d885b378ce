//! Configuration and stage orchestration behind the `cardioseg` binary.

pub mod config;
pub mod pipeline;

pub use config::PipelineConfig;
pub use pipeline::{Outcome, Pipeline, Stage};
