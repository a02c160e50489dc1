//! Frozen external feature trunks described by a small op vocabulary plus a
//! trainable two-class head. Pretrained weights come from a named-tensor
//! archive; the trunk itself is never trained here.

use std::path::Path;

use fas_nn::layers::{max_pool2, relu, Dense};
use fas_nn::loss::softmax_cross_entropy;
use fas_nn::optim::Sgd;
use fas_nn::rng::{derive_seed, seeded_rng};
use fas_nn::{Conv2d, Tensor2, Tensor4};
use ndarray::{Array2, ArrayD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::ingest::SampleRecord;
use crate::synthesis::SyntheticSpoofSet;

use super::{
    load_training_set, stack_batch, validate_training_inputs, ClassifierModel, ClassifierNet,
    TrainFingerprint, MOMENTUM,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ExternalOp {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool,
    GlobalAvgPool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalDescriptor {
    pub name: String,
    /// Square input side the trunk expects (224 for typical ImageNet trunks).
    pub input_size: usize,
    /// Width of the pooled feature vector the head consumes.
    pub feature_dim: usize,
    pub ops: Vec<ExternalOp>,
}

impl ExternalDescriptor {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let d: Self =
            serde_json::from_str(&text).map_err(|e| CoreError::json(path, e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 2 {
            return Err(CoreError::Config("descriptor input_size too small".into()));
        }
        let Some((last, rest)) = self.ops.split_last() else {
            return Err(CoreError::Config("descriptor has no ops".into()));
        };
        if *last != ExternalOp::GlobalAvgPool {
            return Err(CoreError::Config(
                "descriptor must end with global_avg_pool".into(),
            ));
        }
        let mut channels = 3usize;
        for op in rest {
            match op {
                ExternalOp::Conv { name, in_ch, out_ch, kernel, stride, .. } => {
                    if *in_ch != channels {
                        return Err(CoreError::Config(format!(
                            "conv {name} expects {in_ch} input channels but receives {channels}"
                        )));
                    }
                    if *out_ch == 0 || *kernel == 0 || *stride == 0 {
                        return Err(CoreError::Config(format!("conv {name} has zero-sized field")));
                    }
                    channels = *out_ch;
                }
                ExternalOp::Relu | ExternalOp::MaxPool => {}
                ExternalOp::GlobalAvgPool => {
                    return Err(CoreError::Config(
                        "global_avg_pool is only valid as the final op".into(),
                    ));
                }
            }
        }
        if channels != self.feature_dim {
            return Err(CoreError::Config(format!(
                "trunk produces {channels} channels but feature_dim says {}",
                self.feature_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, batch_size: 100, steps: 4000, seed: 0 }
    }
}

impl FinetuneConfig {
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
        Ok(())
    }
}

fn load_convs(descriptor: &ExternalDescriptor, tensors: &[(String, ArrayD<f64>)]) -> Result<Vec<Conv2d>> {
    let find = |name: &str| -> Result<&ArrayD<f64>> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| CoreError::Nn(fas_nn::NnError::MissingTensor { name: name.to_string() }))
    };
    let mut convs = Vec::new();
    for op in &descriptor.ops {
        if let ExternalOp::Conv { name, in_ch, out_ch, kernel, stride, pad } = op {
            let mut conv = Conv2d::new(*in_ch, *out_ch, *kernel, *stride, *pad);
            let w = find(&format!("{name}.weight"))?;
            let b = find(&format!("{name}.bias"))?;
            if w.shape() != conv.weight.value.shape() {
                return Err(CoreError::Nn(fas_nn::NnError::ShapeMismatch {
                    name: format!("{name}.weight"),
                    expected: conv.weight.value.shape().to_vec(),
                    found: w.shape().to_vec(),
                }));
            }
            if b.shape() != conv.bias.value.shape() {
                return Err(CoreError::Nn(fas_nn::NnError::ShapeMismatch {
                    name: format!("{name}.bias"),
                    expected: conv.bias.value.shape().to_vec(),
                    found: b.shape().to_vec(),
                }));
            }
            conv.weight.value.assign(w);
            conv.bias.value.assign(b);
            convs.push(conv);
        }
    }
    Ok(convs)
}

fn trunk_forward(
    descriptor: &ExternalDescriptor,
    convs: &[Conv2d],
    x: &Tensor4,
) -> Result<Tensor2> {
    let (_, c, h, w) = x.dim();
    if c != 3 || h != descriptor.input_size || w != descriptor.input_size {
        return Err(CoreError::InvalidInput(format!(
            "trunk expects Nx3x{0}x{0}, got {1:?}",
            descriptor.input_size,
            x.dim()
        )));
    }
    let mut cur = x.clone();
    let mut conv_idx = 0usize;
    for op in &descriptor.ops {
        match op {
            ExternalOp::Conv { .. } => {
                cur = convs[conv_idx].forward(&cur);
                conv_idx += 1;
            }
            ExternalOp::Relu => cur = relu(&cur),
            ExternalOp::MaxPool => {
                if cur.dim().2 < 2 || cur.dim().3 < 2 {
                    return Err(CoreError::InvalidInput(
                        "feature map too small for max pooling".into(),
                    ));
                }
                cur = max_pool2(&cur).0;
            }
            ExternalOp::GlobalAvgPool => {
                let (n, ch, fh, fw) = cur.dim();
                let mut feats = Array2::zeros((n, ch));
                for i in 0..n {
                    for cc in 0..ch {
                        feats[[i, cc]] =
                            cur.slice(ndarray::s![i, cc, .., ..]).sum() / (fh * fw) as f64;
                    }
                }
                return Ok(feats);
            }
        }
    }
    unreachable!("validated descriptor ends with global_avg_pool")
}

/// Frozen trunk plus a freshly initialized (seeded) two-class head, ready
/// for fine-tuning.
#[derive(Debug, Clone)]
pub struct ExternalBackbone {
    pub descriptor: ExternalDescriptor,
    convs: Vec<Conv2d>,
    head: Dense,
}

/// Loads the descriptor and pretrained trunk weights and attaches a fresh
/// head. The head is seeded from the fine-tune config so a zero-step run is
/// exactly "pretrained trunk + fresh head".
pub fn attach_external_backbone(
    descriptor_path: &Path,
    weights_path: &Path,
    config: &FinetuneConfig,
) -> Result<ExternalBackbone> {
    config.validate()?;
    let descriptor = ExternalDescriptor::load(descriptor_path)?;
    if !weights_path.exists() {
        return Err(CoreError::Config(format!(
            "pretrained weights not found at {weights_path:?}"
        )));
    }
    let (tensors, _) = fas_nn::archive::read_archive(weights_path)?;
    let named: Vec<(String, ArrayD<f64>)> =
        tensors.into_iter().map(|t| (t.name, t.data)).collect();
    let convs = load_convs(&descriptor, &named)?;
    // Dry run proves the op chain and feature width before any training.
    let probe = ndarray::Array4::zeros((1, 3, descriptor.input_size, descriptor.input_size));
    let feats = trunk_forward(&descriptor, &convs, &probe)?;
    if feats.dim().1 != descriptor.feature_dim {
        return Err(CoreError::Config(format!(
            "trunk produced {} features, descriptor says {}",
            feats.dim().1,
            descriptor.feature_dim
        )));
    }
    let mut head = Dense::new(descriptor.feature_dim, 2);
    let mut rng = seeded_rng(derive_seed(config.seed, "external-head"));
    head.init_he(&mut rng);
    Ok(ExternalBackbone { descriptor, convs, head })
}

#[derive(Debug, Clone)]
pub struct ExternalModel {
    pub descriptor: ExternalDescriptor,
    convs: Vec<Conv2d>,
    head: Dense,
}

impl ExternalModel {
    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor2> {
        let feats = trunk_forward(&self.descriptor, &self.convs, x)?;
        Ok(self.head.forward(&feats))
    }

    pub fn to_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::new();
        let mut conv_idx = 0usize;
        for op in &self.descriptor.ops {
            if let ExternalOp::Conv { name, .. } = op {
                out.push((format!("{name}.weight"), self.convs[conv_idx].weight.value.clone()));
                out.push((format!("{name}.bias"), self.convs[conv_idx].bias.value.clone()));
                conv_idx += 1;
            }
        }
        out.push(("head.weight".into(), self.head.weight.value.clone()));
        out.push(("head.bias".into(), self.head.bias.value.clone()));
        out
    }

    pub fn from_tensors(
        descriptor: ExternalDescriptor,
        tensors: &[(String, ArrayD<f64>)],
    ) -> Result<Self> {
        descriptor.validate()?;
        let convs = load_convs(&descriptor, tensors)?;
        let mut head = Dense::new(descriptor.feature_dim, 2);
        let find = |name: &str| -> Result<&ArrayD<f64>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v)
                .ok_or_else(|| {
                    CoreError::Nn(fas_nn::NnError::MissingTensor { name: name.to_string() })
                })
        };
        let w = find("head.weight")?;
        let b = find("head.bias")?;
        if w.shape() != head.weight.value.shape() || b.shape() != head.bias.value.shape() {
            return Err(CoreError::Nn(fas_nn::NnError::ShapeMismatch {
                name: "head.weight".into(),
                expected: head.weight.value.shape().to_vec(),
                found: w.shape().to_vec(),
            }));
        }
        head.weight.value.assign(w);
        head.bias.value.assign(b);
        Ok(Self { descriptor, convs, head })
    }

    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in self.to_tensors() {
            hasher.update(name.as_bytes());
            hasher.update((tensor.ndim() as u64).to_le_bytes());
            for d in tensor.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in tensor.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        fas_nn::archive::hex(&hasher.finalize())
    }
}

/// Head-only fine-tuning on trunk features, which are computed once. The
/// trunk stays frozen throughout.
pub fn train_external_model(
    subject: &str,
    backbone: &ExternalBackbone,
    live_train: &[SampleRecord],
    synthetic: &SyntheticSpoofSet,
    config: &FinetuneConfig,
) -> Result<ClassifierModel> {
    config.validate()?;
    validate_training_inputs(subject, live_train, synthetic)?;
    let (images, labels, data_hash) =
        load_training_set(live_train, synthetic, backbone.descriptor.input_size)?;

    let n = images.len();
    let mut features = Array2::zeros((n, backbone.descriptor.feature_dim));
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(32) {
        let x = stack_batch(&images, chunk);
        let feats = trunk_forward(&backbone.descriptor, &backbone.convs, &x)?;
        for (bi, &i) in chunk.iter().enumerate() {
            features.row_mut(i).assign(&feats.index_axis(Axis(0), bi));
        }
    }

    let mut head = backbone.head.clone();
    let mut checkpoint_losses = Vec::new();
    if config.steps > 0 {
        let mut optim = Sgd::new(config.learning_rate, MOMENTUM);
        let mut rng = seeded_rng(derive_seed(config.seed, "head-batches"));
        let cadence = (config.steps / 10).max(1);
        for step in 0..config.steps {
            let idx: Vec<usize> =
                (0..config.batch_size).map(|_| rng.random_range(0..n)).collect();
            let mut fx = Array2::zeros((idx.len(), backbone.descriptor.feature_dim));
            for (bi, &i) in idx.iter().enumerate() {
                fx.row_mut(bi).assign(&features.row(i));
            }
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let logits = head.forward(&fx);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &batch_labels);
            if !loss.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "head fine-tuning diverged at step {step}"
                )));
            }
            if step % cadence == 0 || step + 1 == config.steps {
                checkpoint_losses.push(loss);
            }
            head.weight.zero_grad();
            head.bias.zero_grad();
            let _ = head.backward(&fx, &dlogits);
            optim.step(&mut [&mut head.weight, &mut head.bias]);
        }
    }

    // Whole-set loss under the final head, defined even for zero steps.
    let logits = head.forward(&features);
    let (final_train_loss, _) = softmax_cross_entropy(&logits, &labels);

    Ok(ClassifierModel {
        subject_id: subject.to_string(),
        net: ClassifierNet::External(ExternalModel {
            descriptor: backbone.descriptor.clone(),
            convs: backbone.convs.clone(),
            head,
        }),
        fingerprint: TrainFingerprint {
            data_hash,
            seed: config.seed,
            final_train_loss,
            epoch_losses: checkpoint_losses,
            modnet_config: None,
            finetune_config: Some(*config),
        },
    })
}
