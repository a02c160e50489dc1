//! Per-user face anti-spoofing pipeline.
//!
//! Stages: dataset ingest and video-atomic splitting, a VGG19 perceptual
//! backbone, single-reference style transfer for spoof synthesis, per-subject
//! liveness classifiers, and presentation-attack metrics/reports.

pub mod backbone;
pub mod classifier;
pub mod error;
pub mod fixture;
pub mod image_buffer;
pub mod ingest;
pub mod metrics;
pub mod style;
pub mod synthesis;

pub use error::{CoreError, Result};
pub use image_buffer::ImageBuffer;
