//! VGG19 convolutional trunk with named taps and Gram matrices.
//!
//! Topology is fixed: 16 conv3x3+relu layers in channel plan
//! 64,64,128,128,256x4,512x8 with five 2x2 max pools, no classifier head.
//! Weights come from an external named-tensor archive described by a JSON
//! manifest; the extractor is frozen (inference plus input-gradient only).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fas_nn::archive::{self, NamedTensor};
use fas_nn::conv::Conv2d;
use fas_nn::layers::{max_pool2, max_pool2_backward, relu, relu_backward};
use fas_nn::rng::{derive_seed, seeded_rng};
use fas_nn::Tensor4;
use ndarray::{Array2, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Conv layers per block; each block ends with a 2x2 max pool.
const BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];

/// (name, in_channels, out_channels) for the 16 conv layers in forward order.
pub fn conv_plan() -> Vec<(String, usize, usize)> {
    let mut plan = Vec::new();
    let mut in_ch = 3;
    for (b, &(convs, out_ch)) in BLOCKS.iter().enumerate() {
        for i in 0..convs {
            plan.push((format!("conv{}_{}", b + 1, i + 1), in_ch, out_ch));
            in_ch = out_ch;
        }
    }
    plan
}

#[derive(Debug, Clone, Copy)]
enum OpKind {
    Conv(usize),
    Relu,
    Pool,
}

#[derive(Debug, Clone)]
struct OpDef {
    kind: OpKind,
    /// Tap name of this op's output (conv outputs are internal-only).
    name: String,
}

fn build_ops() -> Vec<OpDef> {
    let mut ops = Vec::new();
    let mut conv_idx = 0;
    for (b, &(convs, _)) in BLOCKS.iter().enumerate() {
        for i in 0..convs {
            ops.push(OpDef {
                kind: OpKind::Conv(conv_idx),
                name: format!("conv{}_{}", b + 1, i + 1),
            });
            ops.push(OpDef {
                kind: OpKind::Relu,
                name: format!("relu{}_{}", b + 1, i + 1),
            });
            conv_idx += 1;
        }
        ops.push(OpDef {
            kind: OpKind::Pool,
            name: format!("pool{}", b + 1),
        });
    }
    ops
}

/// JSON sidecar describing a weights archive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneManifest {
    pub source_uri: String,
    /// sha256 of the archive file; verified on load when non-empty.
    pub checksum: String,
    /// Per-channel mean subtracted from [0,1] inputs before the first conv.
    pub mean_rgb: [f64; 3],
    pub layer_names: Vec<String>,
    /// Archive file name, resolved relative to the manifest's directory.
    pub archive: String,
}

#[derive(Debug)]
pub struct FeatureExtractor {
    convs: Vec<Conv2d>,
    ops: Vec<OpDef>,
    tap_names: Vec<String>,
    mean_rgb: [f64; 3],
    checksum: String,
}

enum TapeRecord {
    Conv { idx: usize, in_h: usize, in_w: usize },
    Relu { x: Tensor4 },
    Pool { mask: Array4<u8>, in_h: usize, in_w: usize },
}

/// Saved activations from `features_traced`, consumed by `backprop_to_input`.
pub struct ForwardTape {
    records: Vec<(String, TapeRecord)>,
    input_dim: (usize, usize, usize, usize),
}

impl FeatureExtractor {
    /// Loads frozen weights from a JSON manifest plus named-tensor archive.
    pub fn load_backbone(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path)
            .map_err(|e| CoreError::Config(format!("weights manifest {manifest_path:?}: {e}")))?;
        let manifest: BackboneManifest = serde_json::from_str(&text)
            .map_err(|e| CoreError::json(manifest_path, e.to_string()))?;
        let archive_path = manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&manifest.archive);
        let (tensors, checksum) = archive::read_archive(&archive_path)?;
        if !manifest.checksum.is_empty() && manifest.checksum != checksum {
            return Err(CoreError::Config(format!(
                "weights checksum mismatch for {archive_path:?}: manifest {} vs file {}",
                manifest.checksum, checksum
            )));
        }
        let mut by_name: BTreeMap<String, NamedTensor> =
            tensors.into_iter().map(|t| (t.name.clone(), t)).collect();

        let mut convs = Vec::new();
        for (name, in_ch, out_ch) in conv_plan() {
            let mut conv = Conv2d::new(in_ch, out_ch, 3, 1, 1);
            let w = by_name
                .remove(&format!("{name}.weight"))
                .ok_or_else(|| fas_nn::NnError::MissingTensor {
                    name: format!("{name}.weight"),
                })?;
            let b = by_name
                .remove(&format!("{name}.bias"))
                .ok_or_else(|| fas_nn::NnError::MissingTensor {
                    name: format!("{name}.bias"),
                })?;
            let expected_w = vec![out_ch, in_ch, 3, 3];
            if w.data.shape() != expected_w.as_slice() {
                return Err(fas_nn::NnError::ShapeMismatch {
                    name: format!("{name}.weight"),
                    expected: expected_w,
                    found: w.data.shape().to_vec(),
                }
                .into());
            }
            if b.data.shape() != [out_ch] {
                return Err(fas_nn::NnError::ShapeMismatch {
                    name: format!("{name}.bias"),
                    expected: vec![out_ch],
                    found: b.data.shape().to_vec(),
                }
                .into());
            }
            conv.weight.value = w.data;
            conv.bias.value = b.data;
            convs.push(conv);
        }

        let ops = build_ops();
        let tap_names = ops
            .iter()
            .filter(|op| !matches!(op.kind, OpKind::Conv(_)))
            .map(|op| op.name.clone())
            .collect();
        Ok(Self {
            convs,
            ops,
            tap_names,
            mean_rgb: manifest.mean_rgb,
            checksum,
        })
    }

    /// Tap names in forward order: relu1_1..relu5_4 plus pool1..pool5.
    pub fn tap_names(&self) -> &[String] {
        &self.tap_names
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        self.mean_rgb
    }

    fn op_index(&self, tap: &str) -> Result<usize> {
        self.ops
            .iter()
            .position(|op| op.name == tap && !matches!(op.kind, OpKind::Conv(_)))
            .ok_or_else(|| CoreError::InvalidInput(format!("unknown tap layer '{tap}'")))
    }

    /// Deepest op index needed to serve `taps`, validating names and that the
    /// input keeps at least one pixel through every pool on the path.
    fn plan_taps(&self, h: usize, w: usize, taps: &[&str]) -> Result<usize> {
        if taps.is_empty() {
            return Err(CoreError::InvalidInput("taps must be non-empty".into()));
        }
        let mut last = 0;
        for tap in taps {
            last = last.max(self.op_index(tap)?);
        }
        let pools = self.ops[..=last]
            .iter()
            .filter(|op| matches!(op.kind, OpKind::Pool))
            .count() as u32;
        if (h >> pools) == 0 || (w >> pools) == 0 {
            return Err(CoreError::InvalidInput(format!(
                "input {h}x{w} too small for requested taps ({pools} pools on path)"
            )));
        }
        Ok(last)
    }

    fn run(
        &self,
        x: &Tensor4,
        taps: &[&str],
        trace: bool,
    ) -> Result<(BTreeMap<String, Tensor4>, Option<ForwardTape>)> {
        let (_, c, h, w) = x.dim();
        if c != 3 {
            return Err(CoreError::InvalidInput(format!(
                "backbone expects 3-channel input, got {c}"
            )));
        }
        let last = self.plan_taps(h, w, taps)?;
        let mut cur = x.clone();
        for (ch, &m) in self.mean_rgb.iter().enumerate() {
            cur.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v - m);
        }

        let mut out = BTreeMap::new();
        let mut records = Vec::new();
        for op in &self.ops[..=last] {
            let (in_h, in_w) = (cur.dim().2, cur.dim().3);
            cur = match op.kind {
                OpKind::Conv(i) => {
                    let y = self.convs[i].forward(&cur);
                    if trace {
                        records.push((op.name.clone(), TapeRecord::Conv { idx: i, in_h, in_w }));
                    }
                    y
                }
                OpKind::Relu => {
                    let y = relu(&cur);
                    if trace {
                        records.push((op.name.clone(), TapeRecord::Relu { x: cur }));
                    }
                    y
                }
                OpKind::Pool => {
                    let (y, mask) = max_pool2(&cur);
                    if trace {
                        records.push((op.name.clone(), TapeRecord::Pool { mask, in_h, in_w }));
                    }
                    y
                }
            };
            if taps.contains(&op.name.as_str()) {
                out.insert(op.name.clone(), cur.clone());
            }
        }
        let tape = trace.then(|| ForwardTape {
            records,
            input_dim: x.dim(),
        });
        Ok((out, tape))
    }

    /// Activations at the named taps. Inference only; weights are frozen.
    pub fn features(&self, x: &Tensor4, taps: &[&str]) -> Result<BTreeMap<String, Tensor4>> {
        Ok(self.run(x, taps, false)?.0)
    }

    /// As `features`, additionally returning the tape for `backprop_to_input`.
    pub fn features_traced(
        &self,
        x: &Tensor4,
        taps: &[&str],
    ) -> Result<(BTreeMap<String, Tensor4>, ForwardTape)> {
        let (maps, tape) = self.run(x, taps, true)?;
        Ok((maps, tape.expect("trace requested")))
    }

    /// Propagates tap-level gradients back to the raw [0,1] input batch.
    /// Every entry of `tap_grads` must name a tap the tape actually executed.
    pub fn backprop_to_input(
        &self,
        tape: &ForwardTape,
        tap_grads: &BTreeMap<String, Tensor4>,
    ) -> Result<Tensor4> {
        let mut pending = tap_grads.len();
        let mut grad: Option<Tensor4> = None;
        for (name, record) in tape.records.iter().rev() {
            if let Some(g) = tap_grads.get(name) {
                match &mut grad {
                    Some(acc) => {
                        if acc.dim() != g.dim() {
                            return Err(CoreError::InvalidInput(format!(
                                "tap grad '{name}' has shape {:?}, expected {:?}",
                                g.dim(),
                                acc.dim()
                            )));
                        }
                        *acc += g;
                    }
                    None => grad = Some(g.clone()),
                }
                pending -= 1;
            }
            if let Some(gy) = grad.take() {
                grad = Some(match record {
                    TapeRecord::Conv { idx, in_h, in_w } => {
                        self.convs[*idx].backward_data(&gy, *in_h, *in_w)
                    }
                    TapeRecord::Relu { x } => relu_backward(x, &gy),
                    TapeRecord::Pool { mask, in_h, in_w } => {
                        max_pool2_backward(&gy, mask, *in_h, *in_w)
                    }
                });
            }
        }
        if pending != 0 {
            return Err(CoreError::InvalidInput(
                "tap gradient names not covered by the forward tape".into(),
            ));
        }
        // Mean subtraction is a constant shift: gradient passes through.
        match grad {
            Some(g) => {
                debug_assert_eq!(g.dim(), tape.input_dim);
                Ok(g)
            }
            None => Err(CoreError::InvalidInput("no tap gradients supplied".into())),
        }
    }
}

/// Gram matrix of one feature map: G = F·Fᵀ / (C·H·W) with F the C×(H·W)
/// unrolled activations. Symmetric and positive semidefinite by construction.
pub fn gram(f: ArrayView3<'_, f64>) -> Array2<f64> {
    let (c, h, w) = f.dim();
    let flat = f
        .to_shape((c, h * w))
        .expect("contiguous reshape")
        .to_owned();
    let mut g = flat.dot(&flat.t());
    g /= (c * h * w) as f64;
    g
}

/// Gradient of a scalar loss through `gram`: given dL/dG, returns dL/dF.
pub fn gram_backward(f: ArrayView3<'_, f64>, g_grad: &Array2<f64>) -> Array3<f64> {
    let (c, h, w) = f.dim();
    let flat = f
        .to_shape((c, h * w))
        .expect("contiguous reshape")
        .to_owned();
    let sym = g_grad + &g_grad.t();
    let gf = sym.dot(&flat) / (c * h * w) as f64;
    gf.into_shape_with_order((c, h, w))
        .expect("shape restored")
}

/// Writes a seeded He-initialized backbone (archive + manifest) and returns
/// the manifest path. Stands in for pretrained weights in tests and fixtures;
/// random conv features still define a usable perceptual basis.
pub fn write_random_backbone(dir: &Path, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut tensors = Vec::new();
    for (name, in_ch, out_ch) in conv_plan() {
        let mut conv = Conv2d::new(in_ch, out_ch, 3, 1, 1);
        let mut rng = seeded_rng(derive_seed(seed, &name));
        conv.init_he(&mut rng);
        tensors.push((format!("{name}.weight"), conv.weight.value));
        tensors.push((format!("{name}.bias"), conv.bias.value));
    }
    let archive_path = dir.join("backbone.ntar");
    let checksum = archive::write_archive(&archive_path, &tensors)?;
    let ops = build_ops();
    let manifest = BackboneManifest {
        source_uri: format!("seeded-random:{seed}"),
        checksum,
        mean_rgb: [0.5, 0.5, 0.5],
        layer_names: ops
            .iter()
            .filter(|op| !matches!(op.kind, OpKind::Conv(_)))
            .map(|op| op.name.clone())
            .collect(),
        archive: "backbone.ntar".into(),
    };
    let manifest_path = dir.join("backbone.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::json(&manifest_path, e.to_string()))?;
    std::fs::write(&manifest_path, text).map_err(|e| CoreError::io(&manifest_path, e))?;
    Ok(manifest_path)
}
