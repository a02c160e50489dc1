//! Per-subject liveness classification: the compact net, an external-trunk
//! alternative, seeded training loops, and model persistence. Class labels
//! are fixed: index 0 = live, index 1 = spoof.

mod external;
mod modnet;

pub use external::{
    attach_external_backbone, train_external_model, ExternalBackbone, ExternalDescriptor,
    ExternalModel, ExternalOp, FinetuneConfig,
};
pub use modnet::{LayerAudit, ModNetCache, SpoofModNet, INPUT_SIDE};

use std::path::Path;

use fas_nn::loss::{softmax, softmax_cross_entropy};
use fas_nn::optim::Sgd;
use fas_nn::rng::{derive_seed, seeded_rng};
use fas_nn::Tensor4;
use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::image_buffer::ImageBuffer;
use crate::ingest::{Label, SampleRecord, Split};
use crate::synthesis::SyntheticSpoofSet;

pub const LABEL_LIVE: usize = 0;
pub const LABEL_SPOOF: usize = 1;
const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout_pool: f64,
    pub dropout_dense: f64,
    /// Random horizontal flips during training.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            dropout_pool: 0.25,
            dropout_dense: 0.5,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(CoreError::Config("epochs must be positive".into()));
        }
        for (name, p) in [("dropout_pool", self.dropout_pool), ("dropout_dense", self.dropout_dense)] {
            if !(0.0..1.0).contains(&p) {
                return Err(CoreError::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    SpoofModnet,
    ExternalBackbone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub p_live: f64,
    pub p_spoof: f64,
}

impl Prediction {
    /// Spoof wins at and above the threshold; at 0.5 this is argmax with the
    /// tie broken toward spoof.
    pub fn decision(&self, threshold: f64) -> Label {
        if self.p_spoof >= threshold {
            Label::Spoof
        } else {
            Label::Live
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFingerprint {
    pub data_hash: String,
    pub seed: u64,
    pub final_train_loss: f64,
    /// Mean batch loss per epoch (per checkpoint for external trunks).
    pub epoch_losses: Vec<f64>,
    pub modnet_config: Option<TrainConfig>,
    pub finetune_config: Option<FinetuneConfig>,
}

#[derive(Debug, Clone)]
pub enum ClassifierNet {
    ModNet(SpoofModNet),
    External(ExternalModel),
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub subject_id: String,
    pub net: ClassifierNet,
    pub fingerprint: TrainFingerprint,
}

/// Bilinear downscale to the classifier input resolution.
pub fn preprocess(face: &ImageBuffer) -> ImageBuffer {
    preprocess_to(face, INPUT_SIDE)
}

pub fn preprocess_to(face: &ImageBuffer, side: usize) -> ImageBuffer {
    if face.height() == side && face.width() == side {
        face.clone()
    } else {
        face.resize_bilinear(side, side)
    }
}

/// Loaded, resized training set with its content hash. Live first, then
/// synthetic, each block in input order.
fn load_training_set(
    live_train: &[SampleRecord],
    synthetic: &SyntheticSpoofSet,
    side: usize,
) -> Result<(Vec<Array3<f64>>, Vec<usize>, String)> {
    let mut images = Vec::with_capacity(live_train.len() + synthetic.items.len());
    let mut labels = Vec::with_capacity(images.capacity());
    for r in live_train {
        let img = preprocess_to(&ImageBuffer::load_png(&r.path)?, side);
        images.push(img.data().clone());
        labels.push(LABEL_LIVE);
    }
    for item in &synthetic.items {
        let img = preprocess_to(&ImageBuffer::load_png(&item.path)?, side);
        images.push(img.data().clone());
        labels.push(LABEL_SPOOF);
    }
    let mut hasher = Sha256::new();
    for (img, label) in images.iter().zip(&labels) {
        hasher.update([*label as u8]);
        for v in img.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    Ok((images, labels, fas_nn::archive::hex(&hasher.finalize())))
}

fn validate_training_inputs(
    subject: &str,
    live_train: &[SampleRecord],
    synthetic: &SyntheticSpoofSet,
) -> Result<()> {
    if live_train.is_empty() {
        return Err(CoreError::InvalidInput(format!(
            "subject {subject:?} has no live training records"
        )));
    }
    if synthetic.items.is_empty() {
        return Err(CoreError::InvalidInput(format!(
            "subject {subject:?} has no synthetic spoofs; both classes are required"
        )));
    }
    if synthetic.subject_id != subject {
        return Err(CoreError::InvalidInput(format!(
            "synthetic set belongs to {:?}, not {subject:?}",
            synthetic.subject_id
        )));
    }
    for r in live_train {
        if r.subject_id != subject || r.label != Label::Live || r.split != Split::Train {
            return Err(CoreError::InvalidInput(format!(
                "record {:?} is not a live training frame of {subject:?}",
                r.path
            )));
        }
    }
    Ok(())
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn hflip(img: &Array3<f64>) -> Array3<f64> {
    img.slice(ndarray::s![.., .., ..;-1]).to_owned()
}

fn stack_batch(images: &[Array3<f64>], idx: &[usize]) -> Tensor4 {
    let (c, h, w) = images[idx[0]].dim();
    let mut batch = Array4::zeros((idx.len(), c, h, w));
    for (bi, &i) in idx.iter().enumerate() {
        batch.index_axis_mut(Axis(0), bi).assign(&images[i]);
    }
    batch
}

/// Trains the compact net on this subject's live frames and synthetic
/// spoofs. Deterministic given the config seed.
pub fn train_subject_model(
    subject: &str,
    live_train: &[SampleRecord],
    synthetic: &SyntheticSpoofSet,
    config: &TrainConfig,
) -> Result<ClassifierModel> {
    config.validate()?;
    validate_training_inputs(subject, live_train, synthetic)?;
    let (mut images, labels, data_hash) = load_training_set(live_train, synthetic, INPUT_SIDE)?;

    let mut net = SpoofModNet::new(
        derive_seed(config.seed, "modnet-init"),
        config.dropout_pool,
        config.dropout_dense,
    );
    let mut optim = Sgd::new(config.learning_rate, MOMENTUM);
    let mut aux_rng = seeded_rng(derive_seed(config.seed, "train-aux"));
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let order = shuffled_indices(images.len(), derive_seed(config.seed, &format!("epoch/{epoch}")));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if config.augment {
                for &i in chunk {
                    if aux_rng.random::<f64>() < 0.5 {
                        images[i] = hflip(&images[i]);
                    }
                }
            }
            let x = stack_batch(&images, chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = net.forward_train(&x, &mut aux_rng)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &batch_labels);
            if !loss.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "training loss became non-finite at epoch {epoch}; \
                     epoch losses so far: {epoch_losses:?}"
                )));
            }
            epoch_loss += loss;
            batches += 1;
            net.zero_grads();
            net.backward(&cache, &dlogits);
            let mut params = net.params_mut();
            optim.step(&mut params);
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    let final_train_loss = *epoch_losses.last().expect("at least one epoch");
    Ok(ClassifierModel {
        subject_id: subject.to_string(),
        net: ClassifierNet::ModNet(net),
        fingerprint: TrainFingerprint {
            data_hash,
            seed: config.seed,
            final_train_loss,
            epoch_losses,
            modnet_config: Some(*config),
            finetune_config: None,
        },
    })
}

/// Softmax scores for one face crop; resizing to the net's input is handled
/// here.
pub fn predict(model: &ClassifierModel, face: &ImageBuffer) -> Result<Prediction> {
    let side = model.input_side();
    let img = preprocess_to(face, side);
    let x = img.to_tensor4();
    let logits = match &model.net {
        ClassifierNet::ModNet(net) => net.forward_eval(&x)?,
        ClassifierNet::External(net) => net.forward_eval(&x)?,
    };
    let probs = softmax(&logits);
    Ok(Prediction { p_live: probs[[0, LABEL_LIVE]], p_spoof: probs[[0, LABEL_SPOOF]] })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierSidecar {
    subject_id: String,
    backbone: BackboneKind,
    data_hash: String,
    seed: u64,
    final_train_loss: f64,
    epoch_losses: Vec<f64>,
    modnet_config: Option<TrainConfig>,
    finetune_config: Option<FinetuneConfig>,
    descriptor: Option<ExternalDescriptor>,
    archive: String,
    archive_checksum: String,
}

impl ClassifierModel {
    pub fn backbone(&self) -> BackboneKind {
        match &self.net {
            ClassifierNet::ModNet(_) => BackboneKind::SpoofModnet,
            ClassifierNet::External(_) => BackboneKind::ExternalBackbone,
        }
    }

    pub fn input_side(&self) -> usize {
        match &self.net {
            ClassifierNet::ModNet(_) => INPUT_SIDE,
            ClassifierNet::External(net) => net.descriptor.input_size,
        }
    }

    pub fn fingerprint_hash(&self) -> String {
        match &self.net {
            ClassifierNet::ModNet(net) => net.fingerprint(),
            ClassifierNet::External(net) => net.fingerprint(),
        }
    }

    /// Writes `<stem>.ntar` and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<String> {
        let archive_path = stem.with_extension("ntar");
        let sidecar_path = stem.with_extension("json");
        if let Some(parent) = archive_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
        let tensors = match &self.net {
            ClassifierNet::ModNet(net) => net.to_tensors(),
            ClassifierNet::External(net) => net.to_tensors(),
        };
        let checksum = fas_nn::archive::write_archive(&archive_path, &tensors)?;
        let sidecar = ClassifierSidecar {
            subject_id: self.subject_id.clone(),
            backbone: self.backbone(),
            data_hash: self.fingerprint.data_hash.clone(),
            seed: self.fingerprint.seed,
            final_train_loss: self.fingerprint.final_train_loss,
            epoch_losses: self.fingerprint.epoch_losses.clone(),
            modnet_config: self.fingerprint.modnet_config,
            finetune_config: self.fingerprint.finetune_config,
            descriptor: match &self.net {
                ClassifierNet::External(net) => Some(net.descriptor.clone()),
                ClassifierNet::ModNet(_) => None,
            },
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

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar_path = if path.extension().is_some() {
            path.to_path_buf()
        } else {
            path.with_extension("json")
        };
        let text =
            std::fs::read_to_string(&sidecar_path).map_err(|e| CoreError::io(&sidecar_path, e))?;
        let sidecar: ClassifierSidecar =
            serde_json::from_str(&text).map_err(|e| CoreError::json(&sidecar_path, e.to_string()))?;
        let archive_path = sidecar_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&sidecar.archive);
        let (tensors, checksum) = fas_nn::archive::read_archive(&archive_path)?;
        if checksum != sidecar.archive_checksum {
            return Err(CoreError::Config(format!(
                "classifier checksum mismatch for {archive_path:?}"
            )));
        }
        let named: Vec<(String, ndarray::ArrayD<f64>)> =
            tensors.into_iter().map(|t| (t.name, t.data)).collect();
        let net = match sidecar.backbone {
            BackboneKind::SpoofModnet => {
                let cfg = sidecar.modnet_config.ok_or_else(|| {
                    CoreError::Config("spoof_modnet sidecar lacks modnet_config".into())
                })?;
                ClassifierNet::ModNet(SpoofModNet::from_tensors(
                    &named,
                    cfg.dropout_pool,
                    cfg.dropout_dense,
                )?)
            }
            BackboneKind::ExternalBackbone => {
                let descriptor = sidecar.descriptor.clone().ok_or_else(|| {
                    CoreError::Config("external_backbone sidecar lacks descriptor".into())
                })?;
                ClassifierNet::External(ExternalModel::from_tensors(descriptor, &named)?)
            }
        };
        Ok(ClassifierModel {
            subject_id: sidecar.subject_id,
            net,
            fingerprint: TrainFingerprint {
                data_hash: sidecar.data_hash,
                seed: sidecar.seed,
                final_train_loss: sidecar.final_train_loss,
                epoch_losses: sidecar.epoch_losses,
                modnet_config: sidecar.modnet_config,
                finetune_config: sidecar.finetune_config,
            },
        })
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    fn quick_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 2e-3,
            batch_size: 8,
            epochs,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn preprocess_shapes_and_constants() {
        let face = ImageBuffer::constant(256, 256, [0.3, 0.6, 0.9]);
        let small = preprocess(&face);
        assert_eq!((small.height(), small.width()), (32, 32));
        for c in 0..3 {
            let want = [0.3, 0.6, 0.9][c];
            for y in 0..32 {
                for x in 0..32 {
                    assert!((small.get(c, y, x) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn preprocess_round_trip_recovers_small_image() {
        // Smooth content; interpolation noise would dominate for white noise.
        let small = ImageBuffer::from_fn(32, 32, |c, y, x| {
            0.5 + 0.3 * ((y as f64 / 6.0) + c as f64).sin() * (x as f64 / 7.0).cos()
        });
        let big = small.resize_bilinear(256, 256);
        let back = preprocess(&big);
        assert!(
            small.mean_abs_diff(&back) < 0.02,
            "round trip mae {}",
            small.mean_abs_diff(&back)
        );
    }

    #[test]
    fn training_separates_toy_classes_and_memorizes() {
        let dir = tempfile::tempdir().unwrap();
        let (live, synthetic) = toy_training_data(dir.path(), "s1", 24, 24);
        let config = quick_config(12, 3);
        let model = train_subject_model("s1", &live, &synthetic, &config).unwrap();

        let mut correct = 0;
        let mut total = 0;
        for r in &live {
            let p = predict(&model, &ImageBuffer::load_png(&r.path).unwrap()).unwrap();
            assert!((p.p_live + p.p_spoof - 1.0).abs() < 1e-6);
            if p.decision(0.5) == Label::Live {
                correct += 1;
            }
            total += 1;
        }
        for item in &synthetic.items {
            let p = predict(&model, &ImageBuffer::load_png(&item.path).unwrap()).unwrap();
            if p.decision(0.5) == Label::Spoof {
                correct += 1;
            }
            total += 1;
        }
        let acc = correct as f64 / total as f64;
        assert!(acc > 0.95, "train accuracy {acc}");

        // Memorized training image scores confidently.
        let p = predict(&model, &ImageBuffer::load_png(&live[0].path).unwrap()).unwrap();
        assert!(p.p_live > 0.9, "memorized live prob {}", p.p_live);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let (live, synthetic) = toy_training_data(dir.path(), "s1", 8, 8);
        let config = quick_config(2, 5);
        let a = train_subject_model("s1", &live, &synthetic, &config).unwrap();
        let b = train_subject_model("s1", &live, &synthetic, &config).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint);
        assert_eq!(a.fingerprint_hash(), b.fingerprint_hash());
        let c = train_subject_model("s1", &live, &synthetic, &quick_config(2, 6)).unwrap();
        assert_ne!(a.fingerprint_hash(), c.fingerprint_hash());
    }

    #[test]
    fn loss_decreases_for_most_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let (live, synthetic) = toy_training_data(dir.path(), "s1", 8, 8);
        let mut improved = 0;
        for seed in 0..20 {
            let config = quick_config(5, seed);
            let model = train_subject_model("s1", &live, &synthetic, &config).unwrap();
            let losses = &model.fingerprint.epoch_losses;
            if losses[4] < losses[0] {
                improved += 1;
            }
        }
        assert!(improved >= 19, "loss improved for only {improved}/20 seeds");
    }

    #[test]
    fn single_class_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (live, mut synthetic) = toy_training_data(dir.path(), "s1", 4, 4);
        let config = quick_config(1, 1);
        let empty = SyntheticSpoofSet { items: vec![], ..synthetic.clone() };
        assert!(train_subject_model("s1", &live, &empty, &config).is_err());
        assert!(train_subject_model("s1", &[], &synthetic, &config).is_err());
        synthetic.subject_id = "other".into();
        assert!(train_subject_model("s1", &live, &synthetic, &config).is_err());
    }

    #[test]
    fn tie_breaks_toward_spoof() {
        let p = Prediction { p_live: 0.5, p_spoof: 0.5 };
        assert_eq!(p.decision(0.5), Label::Spoof);
        let p = Prediction { p_live: 0.4, p_spoof: 0.6 };
        assert_eq!(p.decision(0.7), Label::Live);
    }

    #[test]
    fn model_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (live, synthetic) = toy_training_data(dir.path(), "s1", 8, 8);
        let model = train_subject_model("s1", &live, &synthetic, &quick_config(2, 7)).unwrap();
        let stem = dir.path().join("models/s1");
        model.save(&stem).unwrap();
        let loaded = ClassifierModel::load(&stem).unwrap();
        assert_eq!(loaded.subject_id, "s1");
        assert_eq!(loaded.backbone(), BackboneKind::SpoofModnet);
        assert_eq!(loaded.fingerprint, model.fingerprint);
        assert_eq!(loaded.fingerprint_hash(), model.fingerprint_hash());
        let face = ImageBuffer::load_png(&live[0].path).unwrap();
        let a = predict(&model, &face).unwrap();
        let b = predict(&loaded, &face).unwrap();
        assert_eq!(a, b);
    }
}
