//! Single-reference style transfer: perceptual losses over VGG19 features, a
//! feed-forward transform network with instance normalization, and a direct
//! pixel-optimization mode used as a correctness oracle.

mod loss;
mod train;
mod transform_net;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image_buffer::ImageBuffer;
use crate::ingest::AttackType;

pub use loss::{
    content_loss, style_grams, style_loss, tv_loss, LossBreakdown, PerceptualEvaluator,
};
pub use train::{corpus_hash, optimize_direct, perceptual_total, stylize, train_style_model, StyleModel, TrainingFingerprint};
pub use transform_net::{TransformNet, TOTAL_STRIDE};

/// Content tap; style taps. The paper names no layers, so the fast-style-
/// transfer lineage defaults apply.
pub const CONTENT_LAYER: &str = "relu3_3";
pub const STYLE_LAYERS: [&str; 4] = ["relu1_2", "relu2_2", "relu3_3", "relu4_3"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            content: 1.0,
            style: 5.0,
            tv: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.content < 0.0 || self.style < 0.0 || self.tv < 0.0 {
            return Err(CoreError::InvalidInput(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.content == 0.0 && self.style == 0.0 && self.tv == 0.0 {
            return Err(CoreError::InvalidInput(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Optimization settings shared by style-model training and the direct
/// pixel-optimization oracle. Defaults are full-run scale; desk and smoke
/// configurations override via the CLI config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Transform-net width: encoder runs base, 2*base, 4*base channels.
    pub base_channels: usize,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            iterations: 40_000,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
            base_channels: 32,
        }
    }
}

impl StyleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.base_channels == 0 {
            return Err(CoreError::InvalidInput(
                "iterations, batch_size, and base_channels must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::InvalidInput(
                "learning_rate must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// One spoof representation image that seeds a style model.
#[derive(Debug, Clone)]
pub struct StyleReference {
    pub style_id: String,
    pub image: ImageBuffer,
    pub attack_type: AttackType,
}
