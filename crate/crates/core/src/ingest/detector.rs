//! Pluggable face detection. The bundled full-frame detector serves synthetic
//! fixtures where the face fills the frame; real detectors are deployment
//! choices wired in through the same trait.

use crate::error::{CoreError, Result};
use crate::image_buffer::ImageBuffer;

/// Detected face box in pixel coordinates (top-left corner plus extent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBox {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

pub trait FaceDetector {
    /// Returns the dominant face box, or none when no face is found.
    fn detect(&self, image: &ImageBuffer) -> Option<FaceBox>;
}

/// Reports the largest centered square as the face box.
pub struct FullFrameDetector;

impl FaceDetector for FullFrameDetector {
    fn detect(&self, image: &ImageBuffer) -> Option<FaceBox> {
        let side = image.height().min(image.width());
        Some(FaceBox {
            y: (image.height() - side) / 2,
            x: (image.width() - side) / 2,
            h: side,
            w: side,
        })
    }
}

/// Resolves a detector identifier from `CropSpec::detector`.
pub fn detector_for(name: &str) -> Result<Box<dyn FaceDetector>> {
    match name {
        "full-frame" => Ok(Box::new(FullFrameDetector)),
        other => Err(CoreError::Config(format!(
            "unknown face detector '{other}' (available: full-frame)"
        ))),
    }
}
