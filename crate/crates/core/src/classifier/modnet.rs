//! The compact per-subject liveness net. Layer sequence, kernel sizes, and
//! parameter counts are locked by `audit` and its tests; batch-norm layers
//! are counted at 4 values per channel (scale, shift, running mean/var).

use fas_nn::layers::{dropout_mask, max_pool2, max_pool2_backward, relu, relu_backward, Dense};
use fas_nn::norm::{BatchNorm1d, BatchNorm1dCache, BatchNorm2d, BatchNorm2dCache};
use fas_nn::rng::derive_seed;
use fas_nn::{Conv2d, Param, Tensor2, Tensor4};
use ndarray::{Array4, ArrayD};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Square input side expected by the first convolution.
pub const INPUT_SIDE: usize = 32;

#[derive(Debug, Clone)]
pub struct SpoofModNet {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    conv4: Conv2d,
    bn4: BatchNorm2d,
    fc1: Dense,
    bn5: BatchNorm1d,
    fc2: Dense,
    pub dropout_pool: f64,
    pub dropout_dense: f64,
}

/// Everything the backward pass needs from one training forward.
pub struct ModNetCache {
    x: Tensor4,
    a1: Tensor4,
    bn1: BatchNorm2dCache,
    in2: Tensor4,
    a2: Tensor4,
    bn2: BatchNorm2dCache,
    pool1_idx: Array4<u8>,
    mask1: ArrayD<f64>,
    in3: Tensor4,
    a3: Tensor4,
    bn3: BatchNorm2dCache,
    in4: Tensor4,
    a4: Tensor4,
    bn4: BatchNorm2dCache,
    pool2_idx: Array4<u8>,
    mask2: ArrayD<f64>,
    flat: Tensor2,
    z1: Tensor2,
    bn5: BatchNorm1dCache,
    maskd: ArrayD<f64>,
    head_in: Tensor2,
}

/// One row of the architecture audit: layer name, parameter count (norms
/// include running statistics), output shape as height x width x channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerAudit {
    pub name: &'static str,
    pub params: usize,
    pub size_out: (usize, usize, usize),
}

fn relu2(x: &Tensor2) -> Tensor2 {
    x.mapv(|v| v.max(0.0))
}

fn relu2_backward(x: &Tensor2, gy: &Tensor2) -> Tensor2 {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

impl SpoofModNet {
    pub fn new(seed: u64, dropout_pool: f64, dropout_dense: f64) -> Self {
        let mut net = Self {
            conv1: Conv2d::new(3, 16, 3, 1, 1),
            bn1: BatchNorm2d::new(16),
            conv2: Conv2d::new(16, 16, 3, 1, 1),
            bn2: BatchNorm2d::new(16),
            conv3: Conv2d::new(16, 32, 3, 1, 1),
            bn3: BatchNorm2d::new(32),
            conv4: Conv2d::new(32, 32, 3, 1, 1),
            bn4: BatchNorm2d::new(32),
            fc1: Dense::new(2048, 64),
            bn5: BatchNorm1d::new(64),
            fc2: Dense::new(64, 2),
            dropout_pool,
            dropout_dense,
        };
        let init_conv = |c: &mut Conv2d, name: &str| {
            let mut rng = fas_nn::rng::seeded_rng(derive_seed(seed, name));
            c.init_he(&mut rng);
        };
        init_conv(&mut net.conv1, "conv1");
        init_conv(&mut net.conv2, "conv2");
        init_conv(&mut net.conv3, "conv3");
        init_conv(&mut net.conv4, "conv4");
        let mut rng = fas_nn::rng::seeded_rng(derive_seed(seed, "fc1"));
        net.fc1.init_he(&mut rng);
        let mut rng = fas_nn::rng::seeded_rng(derive_seed(seed, "fc2"));
        net.fc2.init_he(&mut rng);
        net
    }

    fn check_input(x: &Tensor4) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 || h != INPUT_SIDE || w != INPUT_SIDE {
            return Err(CoreError::InvalidInput(format!(
                "classifier input must be Nx3x{INPUT_SIDE}x{INPUT_SIDE}, got {:?}",
                x.dim()
            )));
        }
        Ok(())
    }

    /// Training forward: batch statistics, dropout live.
    pub fn forward_train(&mut self, x: &Tensor4, rng: &mut ChaCha12Rng) -> Result<(Tensor2, ModNetCache)> {
        Self::check_input(x)?;
        let n = x.dim().0;
        let a1 = self.conv1.forward(x);
        let (b1, bn1) = self.bn1.forward_train(&relu(&a1));
        let a2 = self.conv2.forward(&b1);
        let (b2, bn2) = self.bn2.forward_train(&relu(&a2));
        let (p1, pool1_idx) = max_pool2(&b2);
        let mask1 = dropout_mask(rng, p1.shape(), self.dropout_pool);
        let in3 = &p1 * &mask1.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let a3 = self.conv3.forward(&in3);
        let (b3, bn3) = self.bn3.forward_train(&relu(&a3));
        let a4 = self.conv4.forward(&b3);
        let (b4, bn4) = self.bn4.forward_train(&relu(&a4));
        let (p2, pool2_idx) = max_pool2(&b4);
        let mask2 = dropout_mask(rng, p2.shape(), self.dropout_pool);
        let d2 = &p2 * &mask2.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let flat: Tensor2 = d2.into_shape_with_order((n, 2048)).expect("flatten");
        let z1 = self.fc1.forward(&flat);
        let (b5, bn5) = self.bn5.forward_train(&relu2(&z1));
        let maskd = dropout_mask(rng, b5.shape(), self.dropout_dense);
        let head_in = &b5 * &maskd.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let logits = self.fc2.forward(&head_in);
        Ok((
            logits,
            ModNetCache {
                x: x.clone(),
                a1,
                bn1,
                in2: b1,
                a2,
                bn2,
                pool1_idx,
                mask1,
                in3,
                a3,
                bn3,
                in4: b3,
                a4,
                bn4,
                pool2_idx,
                mask2,
                flat,
                z1,
                bn5,
                maskd,
                head_in,
            },
        ))
    }

    /// Inference forward: running statistics, no dropout.
    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor2> {
        Self::check_input(x)?;
        let n = x.dim().0;
        let h1 = self.bn1.forward_eval(&relu(&self.conv1.forward(x)));
        let h2 = self.bn2.forward_eval(&relu(&self.conv2.forward(&h1)));
        let (p1, _) = max_pool2(&h2);
        let h3 = self.bn3.forward_eval(&relu(&self.conv3.forward(&p1)));
        let h4 = self.bn4.forward_eval(&relu(&self.conv4.forward(&h3)));
        let (p2, _) = max_pool2(&h4);
        let flat: Tensor2 = p2.into_shape_with_order((n, 2048)).expect("flatten");
        let h5 = self.bn5.forward_eval(&relu2(&self.fc1.forward(&flat)));
        Ok(self.fc2.forward(&h5))
    }

    /// Accumulates parameter gradients; returns nothing (input grads unused).
    pub fn backward(&mut self, cache: &ModNetCache, dlogits: &Tensor2) {
        let g = self.fc2.backward(&cache.head_in, dlogits);
        let g = &g * &cache.maskd.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let g = self.bn5.backward(&cache.bn5, &g);
        let g = relu2_backward(&cache.z1, &g);
        let g = self.fc1.backward(&cache.flat, &g);
        let n = g.dim().0;
        let g: Tensor4 = g.into_shape_with_order((n, 32, 8, 8)).expect("unflatten");
        let g = &g * &cache.mask2.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let g = max_pool2_backward(&g, &cache.pool2_idx, 16, 16);
        let g = self.bn4.backward(&cache.bn4, &g);
        let g = relu_backward(&cache.a4, &g);
        let g = self.conv4.backward(&cache.in4, &g);
        let g = self.bn3.backward(&cache.bn3, &g);
        let g = relu_backward(&cache.a3, &g);
        let g = self.conv3.backward(&cache.in3, &g);
        let g = &g * &cache.mask1.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let g = max_pool2_backward(&g, &cache.pool1_idx, 32, 32);
        let g = self.bn2.backward(&cache.bn2, &g);
        let g = relu_backward(&cache.a2, &g);
        let g = self.conv2.backward(&cache.in2, &g);
        let g = self.bn1.backward(&cache.bn1, &g);
        let g = relu_backward(&cache.a1, &g);
        let _ = self.conv1.backward(&cache.x, &g);
    }

    /// Trainable parameters in a stable order (running stats excluded).
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.conv3.weight,
            &mut self.conv3.bias,
            &mut self.bn3.gamma,
            &mut self.bn3.beta,
            &mut self.conv4.weight,
            &mut self.conv4.bias,
            &mut self.bn4.gamma,
            &mut self.bn4.beta,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.bn5.gamma,
            &mut self.bn5.beta,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Full architecture audit with shapes taken from an actual forward pass
    /// of a single 32x32x3 input, not from arithmetic on paper.
    pub fn audit(&self) -> Vec<LayerAudit> {
        let x = Array4::zeros((1, 3, INPUT_SIDE, INPUT_SIDE));
        let dims4 = |t: &Tensor4| (t.dim().2, t.dim().3, t.dim().1);
        let dims2 = |t: &Tensor2| (1usize, 1usize, t.dim().1);
        let conv_p = |c: &Conv2d| c.weight.len() + c.bias.len();
        let dense_p = |d: &Dense| d.weight.len() + d.bias.len();

        let mut rows = Vec::with_capacity(23);
        let mut push = |name, params, size_out| rows.push(LayerAudit { name, params, size_out });

        let a1 = self.conv1.forward(&x);
        push("conv2d_1", conv_p(&self.conv1), dims4(&a1));
        let r1 = relu(&a1);
        push("activation_1", 0, dims4(&r1));
        let h1 = self.bn1.forward_eval(&r1);
        push("batch_norm_1", self.bn1.param_count(), dims4(&h1));
        let a2 = self.conv2.forward(&h1);
        push("conv2d_2", conv_p(&self.conv2), dims4(&a2));
        let r2 = relu(&a2);
        push("activation_2", 0, dims4(&r2));
        let h2 = self.bn2.forward_eval(&r2);
        push("batch_norm_2", self.bn2.param_count(), dims4(&h2));
        let (p1, _) = max_pool2(&h2);
        push("max_pool2d_1", 0, dims4(&p1));
        push("dropout_1", 0, dims4(&p1));
        let a3 = self.conv3.forward(&p1);
        push("conv2d_3", conv_p(&self.conv3), dims4(&a3));
        let r3 = relu(&a3);
        push("activation_3", 0, dims4(&r3));
        let h3 = self.bn3.forward_eval(&r3);
        push("batch_norm_3", self.bn3.param_count(), dims4(&h3));
        let a4 = self.conv4.forward(&h3);
        push("conv2d_4", conv_p(&self.conv4), dims4(&a4));
        let r4 = relu(&a4);
        push("activation_4", 0, dims4(&r4));
        let h4 = self.bn4.forward_eval(&r4);
        push("batch_norm_4", self.bn4.param_count(), dims4(&h4));
        let (p2, _) = max_pool2(&h4);
        push("max_pool2d_2", 0, dims4(&p2));
        push("dropout_2", 0, dims4(&p2));
        let flat: Tensor2 = p2.into_shape_with_order((1, 2048)).expect("flatten");
        push("flatten_1", 0, dims2(&flat));
        let z1 = self.fc1.forward(&flat);
        push("dense_1", dense_p(&self.fc1), dims2(&z1));
        let r5 = relu2(&z1);
        push("activation_5", 0, dims2(&r5));
        let h5 = self.bn5.forward_eval(&r5);
        push("batch_norm_5", self.bn5.param_count(), dims2(&h5));
        push("dropout_3", 0, dims2(&h5));
        let logits = self.fc2.forward(&h5);
        push("dense_2", dense_p(&self.fc2), dims2(&logits));
        let probs = fas_nn::loss::softmax(&logits);
        push("activation_6", 0, dims2(&probs));
        rows
    }

    /// Audited total: trainable weights plus norm running statistics.
    pub fn audited_param_count(&self) -> usize {
        self.audit().iter().map(|r| r.params).sum()
    }

    fn tensor_names() -> Vec<&'static str> {
        vec![
            "conv1.weight",
            "conv1.bias",
            "bn1.gamma",
            "bn1.beta",
            "bn1.running_mean",
            "bn1.running_var",
            "conv2.weight",
            "conv2.bias",
            "bn2.gamma",
            "bn2.beta",
            "bn2.running_mean",
            "bn2.running_var",
            "conv3.weight",
            "conv3.bias",
            "bn3.gamma",
            "bn3.beta",
            "bn3.running_mean",
            "bn3.running_var",
            "conv4.weight",
            "conv4.bias",
            "bn4.gamma",
            "bn4.beta",
            "bn4.running_mean",
            "bn4.running_var",
            "fc1.weight",
            "fc1.bias",
            "bn5.gamma",
            "bn5.beta",
            "bn5.running_mean",
            "bn5.running_var",
            "fc2.weight",
            "fc2.bias",
        ]
    }

    pub fn to_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        let values: Vec<ArrayD<f64>> = vec![
            self.conv1.weight.value.clone(),
            self.conv1.bias.value.clone(),
            self.bn1.gamma.value.clone(),
            self.bn1.beta.value.clone(),
            self.bn1.running_mean.clone().into_dyn(),
            self.bn1.running_var.clone().into_dyn(),
            self.conv2.weight.value.clone(),
            self.conv2.bias.value.clone(),
            self.bn2.gamma.value.clone(),
            self.bn2.beta.value.clone(),
            self.bn2.running_mean.clone().into_dyn(),
            self.bn2.running_var.clone().into_dyn(),
            self.conv3.weight.value.clone(),
            self.conv3.bias.value.clone(),
            self.bn3.gamma.value.clone(),
            self.bn3.beta.value.clone(),
            self.bn3.running_mean.clone().into_dyn(),
            self.bn3.running_var.clone().into_dyn(),
            self.conv4.weight.value.clone(),
            self.conv4.bias.value.clone(),
            self.bn4.gamma.value.clone(),
            self.bn4.beta.value.clone(),
            self.bn4.running_mean.clone().into_dyn(),
            self.bn4.running_var.clone().into_dyn(),
            self.fc1.weight.value.clone(),
            self.fc1.bias.value.clone(),
            self.bn5.gamma.value.clone(),
            self.bn5.beta.value.clone(),
            self.bn5.running_mean.clone().into_dyn(),
            self.bn5.running_var.clone().into_dyn(),
            self.fc2.weight.value.clone(),
            self.fc2.bias.value.clone(),
        ];
        Self::tensor_names()
            .into_iter()
            .map(String::from)
            .zip(values)
            .collect()
    }

    pub fn from_tensors(tensors: &[(String, ArrayD<f64>)], dropout_pool: f64, dropout_dense: f64) -> Result<Self> {
        let mut net = Self::new(0, dropout_pool, dropout_dense);
        let find = |name: &str| -> Result<&ArrayD<f64>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v)
                .ok_or_else(|| {
                    CoreError::Nn(fas_nn::NnError::MissingTensor { name: name.to_string() })
                })
        };
        let load = |slot: &mut ArrayD<f64>, name: &str| -> Result<()> {
            let v = find(name)?;
            if v.shape() != slot.shape() {
                return Err(CoreError::Nn(fas_nn::NnError::ShapeMismatch {
                    name: name.to_string(),
                    expected: slot.shape().to_vec(),
                    found: v.shape().to_vec(),
                }));
            }
            slot.assign(v);
            Ok(())
        };
        macro_rules! load_bn {
            ($bn:expr, $prefix:literal) => {{
                load(&mut $bn.gamma.value, concat!($prefix, ".gamma"))?;
                load(&mut $bn.beta.value, concat!($prefix, ".beta"))?;
                let rm = find(concat!($prefix, ".running_mean"))?;
                let rv = find(concat!($prefix, ".running_var"))?;
                if rm.len() != $bn.running_mean.len() || rv.len() != $bn.running_var.len() {
                    return Err(CoreError::Nn(fas_nn::NnError::ShapeMismatch {
                        name: concat!($prefix, ".running_mean").to_string(),
                        expected: vec![$bn.running_mean.len()],
                        found: rm.shape().to_vec(),
                    }));
                }
                $bn.running_mean.assign(&rm.view().into_dimensionality::<ndarray::Ix1>().unwrap());
                $bn.running_var.assign(&rv.view().into_dimensionality::<ndarray::Ix1>().unwrap());
            }};
        }
        load(&mut net.conv1.weight.value, "conv1.weight")?;
        load(&mut net.conv1.bias.value, "conv1.bias")?;
        load(&mut net.conv2.weight.value, "conv2.weight")?;
        load(&mut net.conv2.bias.value, "conv2.bias")?;
        load(&mut net.conv3.weight.value, "conv3.weight")?;
        load(&mut net.conv3.bias.value, "conv3.bias")?;
        load(&mut net.conv4.weight.value, "conv4.weight")?;
        load(&mut net.conv4.bias.value, "conv4.bias")?;
        load(&mut net.fc1.weight.value, "fc1.weight")?;
        load(&mut net.fc1.bias.value, "fc1.bias")?;
        load(&mut net.fc2.weight.value, "fc2.weight")?;
        load(&mut net.fc2.bias.value, "fc2.bias")?;
        load_bn!(net.bn1, "bn1");
        load_bn!(net.bn2, "bn2");
        load_bn!(net.bn3, "bn3");
        load_bn!(net.bn4, "bn4");
        load_bn!(net.bn5, "bn5");
        Ok(net)
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
