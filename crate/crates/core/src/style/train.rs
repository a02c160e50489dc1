//! Style-model training, feed-forward stylization, and the slow
//! pixel-optimization oracle. All three are deterministic given their seeds.

use std::path::Path;

use fas_nn::optim::Adam;
use fas_nn::rng::{derive_seed, seeded_rng};
use fas_nn::Tensor4;
use ndarray::{Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::image_buffer::ImageBuffer;
use crate::ingest::AttackType;
use crate::style::transform_net::{TransformNet, TOTAL_STRIDE};
use crate::style::{
    LossBreakdown, LossWeights, PerceptualEvaluator, StyleConfig, StyleReference, CONTENT_LAYER,
    STYLE_LAYERS,
};
use crate::backbone::FeatureExtractor;

/// Everything needed to re-run training deterministically, plus the observed
/// loss trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingFingerprint {
    pub corpus_hash: String,
    pub seed: u64,
    pub config: StyleConfig,
    pub weights: LossWeights,
    /// (iteration, total loss) at checkpoint cadence.
    pub checkpoints: Vec<(usize, f64)>,
    /// Total loss at every iteration.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StyleModel {
    pub style_id: String,
    pub attack_type: AttackType,
    pub net: TransformNet,
    pub fingerprint: TrainingFingerprint,
}

/// JSON sidecar stored next to a model archive.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelSidecar {
    style_id: String,
    attack_type: AttackType,
    config: StyleConfig,
    weights: LossWeights,
    loss_trace: Vec<f64>,
    checkpoints: Vec<(usize, f64)>,
    corpus_hash: String,
    seed: u64,
    archive: String,
    archive_checksum: String,
}

/// Content hash over image dims and pixel bytes, order-sensitive.
pub fn corpus_hash(images: &[ImageBuffer]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((images.len() as u64).to_le_bytes());
    for img in images {
        hasher.update((img.height() as u64).to_le_bytes());
        hasher.update((img.width() as u64).to_le_bytes());
        for v in img.data().iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    fas_nn::archive::hex(&hasher.finalize())
}

fn checkpoint_cadence(iterations: usize) -> usize {
    (iterations / 10).max(1)
}

/// Trains one feed-forward style model against a single reference image.
/// Content targets are the inputs themselves; style targets are the
/// reference's Gram matrices. Aborts with the last finite checkpoint when the
/// loss turns non-finite.
pub fn train_style_model(
    reference: &StyleReference,
    corpus: &[ImageBuffer],
    ext: &FeatureExtractor,
    weights: LossWeights,
    config: &StyleConfig,
) -> Result<StyleModel> {
    config.validate()?;
    weights.validate()?;
    if corpus.is_empty() {
        return Err(CoreError::InvalidInput("style corpus is empty".into()));
    }
    let (h, w) = (corpus[0].height(), corpus[0].width());
    for img in corpus {
        if img.height() != h || img.width() != w {
            return Err(CoreError::InvalidInput(
                "style corpus images must share dimensions".into(),
            ));
        }
    }
    if h % TOTAL_STRIDE != 0 || w % TOTAL_STRIDE != 0 {
        return Err(CoreError::InvalidInput(format!(
            "style corpus dimensions must be divisible by {TOTAL_STRIDE}, got {h}x{w}"
        )));
    }

    let evaluator = PerceptualEvaluator::new(
        ext,
        weights,
        CONTENT_LAYER,
        &STYLE_LAYERS.to_vec(),
        Some(&reference.image),
    )?;

    // Content-layer features per corpus image, computed once.
    let content_feats: Option<Vec<Tensor4>> = if weights.content > 0.0 {
        let mut feats = Vec::with_capacity(corpus.len());
        for img in corpus {
            feats.push(evaluator.content_features(&img.to_tensor4())?);
        }
        Some(feats)
    } else {
        None
    };

    let mut net = TransformNet::new(
        config.base_channels,
        derive_seed(config.seed, "transform-net-init"),
    );
    let mut optim = Adam::new(config.learning_rate);
    let mut rng = seeded_rng(derive_seed(config.seed, "style-batches"));
    let cadence = checkpoint_cadence(config.iterations);

    let mut trace: Vec<f64> = Vec::with_capacity(config.iterations);
    let mut checkpoints: Vec<(usize, f64)> = Vec::new();
    for iter in 0..config.iterations {
        let indices: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..corpus.len()))
            .collect();
        let mut batch = Array4::zeros((indices.len(), 3, h, w));
        for (bi, &ci) in indices.iter().enumerate() {
            batch.index_axis_mut(Axis(0), bi).assign(corpus[ci].data());
        }
        let target = content_feats.as_ref().map(|feats| {
            let f0 = &feats[indices[0]];
            let (_, c, fh, fw) = f0.dim();
            let mut t = Array4::zeros((indices.len(), c, fh, fw));
            for (bi, &ci) in indices.iter().enumerate() {
                t.index_axis_mut(Axis(0), bi)
                    .assign(&feats[ci].index_axis(Axis(0), 0));
            }
            t
        });

        let (yhat, cache) = net.forward(&batch)?;
        let (breakdown, pixel_grad) = evaluator.eval_grad(&yhat, target.as_ref())?;
        if !breakdown.total.is_finite() {
            let last = checkpoints.last().copied();
            return Err(CoreError::Numeric(format!(
                "style training diverged at iteration {iter}; last finite checkpoint: {last:?}"
            )));
        }
        trace.push(breakdown.total);
        if iter % cadence == 0 || iter + 1 == config.iterations {
            checkpoints.push((iter, breakdown.total));
        }
        net.zero_grads();
        net.backward(&cache, &pixel_grad);
        let mut params = net.params_mut();
        optim.step(&mut params);
    }

    Ok(StyleModel {
        style_id: reference.style_id.clone(),
        attack_type: reference.attack_type,
        net,
        fingerprint: TrainingFingerprint {
            corpus_hash: corpus_hash(corpus),
            seed: config.seed,
            config: *config,
            weights,
            checkpoints,
            loss_trace: trace,
        },
    })
}

/// Reflect-pads (mirror without edge repeat) to the next multiple of the
/// net's total stride on the bottom/right, runs the net, crops back. Output
/// dims always equal input dims.
pub fn stylize(model: &StyleModel, x: &ImageBuffer) -> Result<ImageBuffer> {
    let (h, w) = (x.height(), x.width());
    let min_side = 2 * TOTAL_STRIDE;
    if h < min_side || w < min_side {
        return Err(CoreError::InvalidInput(format!(
            "stylize input must be at least {min_side}x{min_side}, got {h}x{w}"
        )));
    }
    let ph = (TOTAL_STRIDE - h % TOTAL_STRIDE) % TOTAL_STRIDE;
    let pw = (TOTAL_STRIDE - w % TOTAL_STRIDE) % TOTAL_STRIDE;
    let padded = if ph == 0 && pw == 0 {
        x.clone()
    } else {
        ImageBuffer::from_fn(h + ph, w + pw, |c, y, xx| {
            let sy = if y < h { y } else { 2 * h - 2 - y };
            let sx = if xx < w { xx } else { 2 * w - 2 - xx };
            x.get(c, sy, sx)
        })
    };
    let (out, _) = model.net.forward(&padded.to_tensor4())?;
    let full = ImageBuffer::from_tensor4(&out, 0);
    full.crop(0, 0, h, w)
}

/// Gatys-style oracle: Adam on the pixels of a working image initialized at
/// the content image, minimizing the same weighted objective. Returns the
/// final image and the per-step total-loss trace.
pub fn optimize_direct(
    content: &ImageBuffer,
    reference: &StyleReference,
    ext: &FeatureExtractor,
    weights: LossWeights,
    config: &StyleConfig,
) -> Result<(ImageBuffer, Vec<f64>)> {
    config.validate()?;
    weights.validate()?;
    let evaluator = PerceptualEvaluator::new(
        ext,
        weights,
        CONTENT_LAYER,
        &STYLE_LAYERS.to_vec(),
        Some(&reference.image),
    )?;
    let target = if weights.content > 0.0 {
        Some(evaluator.content_features(&content.to_tensor4())?)
    } else {
        None
    };
    let mut work = fas_nn::param::Param::new(content.to_tensor4().into_dyn());
    let mut optim = Adam::new(config.learning_rate);
    let mut trace = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        let x: Tensor4 = work
            .value
            .clone()
            .into_dimensionality()
            .expect("4d working image");
        let (breakdown, grad) = evaluator.eval_grad(&x, target.as_ref())?;
        if !breakdown.total.is_finite() {
            return Err(CoreError::Numeric(format!(
                "direct optimization diverged at step {step}; trace tail: {:?}",
                &trace[trace.len().saturating_sub(3)..]
            )));
        }
        trace.push(breakdown.total);
        work.grad.assign(&grad.into_dyn());
        optim.step(&mut [&mut work]);
    }
    let final_img = ImageBuffer::from_tensor4(
        &work.value.into_dimensionality().expect("4d working image"),
        0,
    );
    Ok((final_img, trace))
}

/// Evaluates the weighted objective of an output image against the same
/// targets used in training: content target = the source image.
pub fn perceptual_total(
    output: &ImageBuffer,
    source: &ImageBuffer,
    reference: &StyleReference,
    ext: &FeatureExtractor,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let evaluator = PerceptualEvaluator::new(
        ext,
        weights,
        CONTENT_LAYER,
        &STYLE_LAYERS.to_vec(),
        Some(&reference.image),
    )?;
    let target = if weights.content > 0.0 {
        Some(evaluator.content_features(&source.to_tensor4())?)
    } else {
        None
    };
    evaluator.eval(&output.to_tensor4(), target.as_ref())
}

impl StyleModel {
    /// Writes `<stem>.ntar` (weights) and `<stem>.json` (sidecar); `stem` is
    /// the path without extension. Returns the archive checksum.
    pub fn save(&self, stem: &Path) -> Result<String> {
        let archive_path = stem.with_extension("ntar");
        let sidecar_path = stem.with_extension("json");
        if let Some(parent) = archive_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
        let checksum = fas_nn::archive::write_archive(&archive_path, &self.net.to_tensors())?;
        let sidecar = ModelSidecar {
            style_id: self.style_id.clone(),
            attack_type: self.attack_type,
            config: self.fingerprint.config,
            weights: self.fingerprint.weights,
            loss_trace: self.fingerprint.loss_trace.clone(),
            checkpoints: self.fingerprint.checkpoints.clone(),
            corpus_hash: self.fingerprint.corpus_hash.clone(),
            seed: self.fingerprint.seed,
            archive: archive_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            archive_checksum: checksum.clone(),
        };
        let text = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| CoreError::json(&sidecar_path, e.to_string()))?;
        std::fs::write(&sidecar_path, text).map_err(|e| CoreError::io(&sidecar_path, e))?;
        Ok(checksum)
    }

    /// Loads from the JSON sidecar path (or its stem).
    pub fn load(path: &Path) -> Result<Self> {
        let sidecar_path = if path.extension().is_some() {
            path.to_path_buf()
        } else {
            path.with_extension("json")
        };
        let text =
            std::fs::read_to_string(&sidecar_path).map_err(|e| CoreError::io(&sidecar_path, e))?;
        let sidecar: ModelSidecar =
            serde_json::from_str(&text).map_err(|e| CoreError::json(&sidecar_path, e.to_string()))?;
        let archive_path = sidecar_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&sidecar.archive);
        let (tensors, checksum) = fas_nn::archive::read_archive(&archive_path)?;
        if checksum != sidecar.archive_checksum {
            return Err(CoreError::Config(format!(
                "style model checksum mismatch for {archive_path:?}"
            )));
        }
        let named: Vec<(String, ndarray::ArrayD<f64>)> =
            tensors.into_iter().map(|t| (t.name, t.data)).collect();
        let net = TransformNet::from_tensors(&named)?;
        Ok(StyleModel {
            style_id: sidecar.style_id,
            attack_type: sidecar.attack_type,
            net,
            fingerprint: TrainingFingerprint {
                corpus_hash: sidecar.corpus_hash,
                seed: sidecar.seed,
                config: sidecar.config,
                weights: sidecar.weights,
                checkpoints: sidecar.checkpoints,
                loss_trace: sidecar.loss_trace,
            },
        })
    }
}
