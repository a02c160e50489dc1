//! Feed-forward image transform network (fast style transfer):
//! 9x9 conv -> two stride-2 convs -> 5 residual blocks -> two nearest-upsample
//! convs -> 9x9 conv with sigmoid output. Instance normalization follows every
//! conv except the output, so spatial dims are preserved for inputs whose
//! sides are divisible by 4.

use fas_nn::conv::Conv2d;
use fas_nn::layers::{relu, relu_backward, sigmoid, sigmoid_backward, upsample2, upsample2_backward};
use fas_nn::norm::{InstanceNorm, InstanceNormCache};
use fas_nn::param::Param;
use fas_nn::rng::{derive_seed, seeded_rng};
use fas_nn::Tensor4;
use ndarray::ArrayD;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

pub const RESIDUAL_BLOCKS: usize = 5;
/// Two stride-2 encoder convs; inputs must be divisible by this.
pub const TOTAL_STRIDE: usize = 4;

#[derive(Debug, Clone)]
struct ConvUnit {
    conv: Conv2d,
    norm: InstanceNorm,
}

impl ConvUnit {
    fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Self {
        Self {
            conv: Conv2d::new(in_ch, out_ch, k, stride, k / 2),
            norm: InstanceNorm::new(out_ch),
        }
    }
}

struct UnitCache {
    x: Tensor4,
    norm: InstanceNormCache,
    /// Pre-activation (norm output); present only for relu units.
    pre_relu: Option<Tensor4>,
}

#[derive(Debug, Clone)]
struct ResBlock {
    a: ConvUnit,
    b: ConvUnit,
}

struct ResCache {
    a: UnitCache,
    b: UnitCache,
}

#[derive(Debug, Clone)]
pub struct TransformNet {
    pub base: usize,
    enc1: ConvUnit,
    enc2: ConvUnit,
    enc3: ConvUnit,
    res: Vec<ResBlock>,
    dec1: ConvUnit,
    dec2: ConvUnit,
    out: Conv2d,
}

/// Forward activations needed by `backward`.
pub struct NetCache {
    enc1: UnitCache,
    enc2: UnitCache,
    enc3: UnitCache,
    res: Vec<ResCache>,
    dec1: UnitCache,
    dec2: UnitCache,
    out_x: Tensor4,
    out_y: Tensor4,
}

impl TransformNet {
    pub fn new(base: usize, seed: u64) -> Self {
        let mut net = Self {
            base,
            enc1: ConvUnit::new(3, base, 9, 1),
            enc2: ConvUnit::new(base, 2 * base, 3, 2),
            enc3: ConvUnit::new(2 * base, 4 * base, 3, 2),
            res: (0..RESIDUAL_BLOCKS)
                .map(|_| ResBlock {
                    a: ConvUnit::new(4 * base, 4 * base, 3, 1),
                    b: ConvUnit::new(4 * base, 4 * base, 3, 1),
                })
                .collect(),
            dec1: ConvUnit::new(4 * base, 2 * base, 3, 1),
            dec2: ConvUnit::new(2 * base, base, 3, 1),
            out: Conv2d::new(base, 3, 9, 1, 4),
        };
        for (i, conv) in net.convs_mut().into_iter().enumerate() {
            let mut rng = seeded_rng(derive_seed(seed, &format!("tnet-conv{i}")));
            conv.init_he(&mut rng);
        }
        net
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut v = vec![
            &mut self.enc1.conv,
            &mut self.enc2.conv,
            &mut self.enc3.conv,
        ];
        for r in &mut self.res {
            v.push(&mut r.a.conv);
            v.push(&mut r.b.conv);
        }
        v.push(&mut self.dec1.conv);
        v.push(&mut self.dec2.conv);
        v.push(&mut self.out);
        v
    }

    /// All trainable parameters in a stable order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        fn unit(u: &mut ConvUnit) -> Vec<&mut Param> {
            vec![
                &mut u.conv.weight,
                &mut u.conv.bias,
                &mut u.norm.gamma,
                &mut u.norm.beta,
            ]
        }
        let mut v = Vec::new();
        v.extend(unit(&mut self.enc1));
        v.extend(unit(&mut self.enc2));
        v.extend(unit(&mut self.enc3));
        for r in &mut self.res {
            v.extend(unit(&mut r.a));
            v.extend(unit(&mut r.b));
        }
        v.extend(unit(&mut self.dec1));
        v.extend(unit(&mut self.dec2));
        v.push(&mut self.out.weight);
        v.push(&mut self.out.bias);
        v
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 {
            return Err(CoreError::InvalidInput(format!(
                "transform net expects 3 channels, got {c}"
            )));
        }
        if h % TOTAL_STRIDE != 0 || w % TOTAL_STRIDE != 0 || h < 2 * TOTAL_STRIDE || w < 2 * TOTAL_STRIDE
        {
            return Err(CoreError::InvalidInput(format!(
                "transform net input must be a multiple of {TOTAL_STRIDE} and at least {}, got {h}x{w}",
                2 * TOTAL_STRIDE
            )));
        }
        Ok(())
    }

    fn unit_forward(u: &ConvUnit, x: &Tensor4, with_relu: bool) -> (Tensor4, UnitCache) {
        let conv_out = u.conv.forward(x);
        let (normed, norm_cache) = u.norm.forward(&conv_out);
        if with_relu {
            let y = relu(&normed);
            (
                y,
                UnitCache {
                    x: x.clone(),
                    norm: norm_cache,
                    pre_relu: Some(normed),
                },
            )
        } else {
            (
                normed,
                UnitCache {
                    x: x.clone(),
                    norm: norm_cache,
                    pre_relu: None,
                },
            )
        }
    }

    fn unit_backward(u: &mut ConvUnit, cache: &UnitCache, gy: &Tensor4) -> Tensor4 {
        let g = match &cache.pre_relu {
            Some(pre) => relu_backward(pre, gy),
            None => gy.clone(),
        };
        let g = u.norm.backward(&cache.norm, &g);
        u.conv.backward(&cache.x, &g)
    }

    /// Output in (0,1) with the input's spatial dims. The cache feeds
    /// `backward`; inference can drop it.
    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, NetCache)> {
        self.check_input(x)?;
        let (y, enc1) = Self::unit_forward(&self.enc1, x, true);
        let (y, enc2) = Self::unit_forward(&self.enc2, &y, true);
        let (mut y, enc3) = Self::unit_forward(&self.enc3, &y, true);
        let mut res_caches = Vec::with_capacity(self.res.len());
        for block in &self.res {
            let (a_out, a_cache) = Self::unit_forward(&block.a, &y, true);
            let (b_out, b_cache) = Self::unit_forward(&block.b, &a_out, false);
            y = &y + &b_out;
            res_caches.push(ResCache { a: a_cache, b: b_cache });
        }
        let y_up = upsample2(&y);
        let (y, dec1) = Self::unit_forward(&self.dec1, &y_up, true);
        let y_up = upsample2(&y);
        let (y, dec2) = Self::unit_forward(&self.dec2, &y_up, true);
        let out_x = y;
        let logits = self.out.forward(&out_x);
        let out_y = sigmoid(&logits);
        Ok((
            out_y.clone(),
            NetCache {
                enc1,
                enc2,
                enc3,
                res: res_caches,
                dec1,
                dec2,
                out_x,
                out_y,
            },
        ))
    }

    /// Accumulates parameter gradients from d(loss)/d(output); returns
    /// d(loss)/d(input).
    pub fn backward(&mut self, cache: &NetCache, gy: &Tensor4) -> Tensor4 {
        let g = sigmoid_backward(&cache.out_y, gy);
        let g = self.out.backward(&cache.out_x, &g);
        let g = Self::unit_backward(&mut self.dec2, &cache.dec2, &g);
        let g = upsample2_backward(&g);
        let g = Self::unit_backward(&mut self.dec1, &cache.dec1, &g);
        let mut g = upsample2_backward(&g);
        for (block, rc) in self.res.iter_mut().zip(cache.res.iter()).rev() {
            let branch = Self::unit_backward(&mut block.b, &rc.b, &g);
            let branch = Self::unit_backward(&mut block.a, &rc.a, &branch);
            g += &branch;
        }
        let g = Self::unit_backward(&mut self.enc3, &cache.enc3, &g);
        let g = Self::unit_backward(&mut self.enc2, &cache.enc2, &g);
        Self::unit_backward(&mut self.enc1, &cache.enc1, &g)
    }

    /// Named tensors in a stable order for archiving.
    pub fn to_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        fn unit(name: &str, u: &ConvUnit, out: &mut Vec<(String, ArrayD<f64>)>) {
            out.push((format!("{name}.conv.weight"), u.conv.weight.value.clone()));
            out.push((format!("{name}.conv.bias"), u.conv.bias.value.clone()));
            out.push((format!("{name}.norm.gamma"), u.norm.gamma.value.clone()));
            out.push((format!("{name}.norm.beta"), u.norm.beta.value.clone()));
        }
        let mut v = vec![(
            "meta.base".to_string(),
            ArrayD::from_shape_vec(vec![1], vec![self.base as f64]).unwrap(),
        )];
        unit("enc1", &self.enc1, &mut v);
        unit("enc2", &self.enc2, &mut v);
        unit("enc3", &self.enc3, &mut v);
        for (i, r) in self.res.iter().enumerate() {
            unit(&format!("res{i}.a"), &r.a, &mut v);
            unit(&format!("res{i}.b"), &r.b, &mut v);
        }
        unit("dec1", &self.dec1, &mut v);
        unit("dec2", &self.dec2, &mut v);
        v.push(("out.weight".to_string(), self.out.weight.value.clone()));
        v.push(("out.bias".to_string(), self.out.bias.value.clone()));
        v
    }

    pub fn from_tensors(tensors: &[(String, ArrayD<f64>)]) -> Result<Self> {
        let find = |name: &str| -> Result<&ArrayD<f64>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| {
                    fas_nn::NnError::MissingTensor {
                        name: name.to_string(),
                    }
                    .into()
                })
        };
        let base = find("meta.base")?[[0]] as usize;
        if base == 0 {
            return Err(CoreError::InvalidInput("meta.base must be positive".into()));
        }
        let mut net = Self::new(base, 0);
        let load_unit = |name: &str, u: &mut ConvUnit| -> Result<()> {
            for (field, param) in [
                ("conv.weight", &mut u.conv.weight),
                ("conv.bias", &mut u.conv.bias),
                ("norm.gamma", &mut u.norm.gamma),
                ("norm.beta", &mut u.norm.beta),
            ] {
                let full = format!("{name}.{field}");
                let t = tensors
                    .iter()
                    .find(|(n, _)| *n == full)
                    .map(|(_, t)| t)
                    .ok_or_else(|| fas_nn::NnError::MissingTensor { name: full.clone() })?;
                if t.shape() != param.value.shape() {
                    return Err(fas_nn::NnError::ShapeMismatch {
                        name: full,
                        expected: param.value.shape().to_vec(),
                        found: t.shape().to_vec(),
                    }
                    .into());
                }
                param.value = t.clone();
            }
            Ok(())
        };
        load_unit("enc1", &mut net.enc1)?;
        load_unit("enc2", &mut net.enc2)?;
        load_unit("enc3", &mut net.enc3)?;
        for i in 0..RESIDUAL_BLOCKS {
            let (a_name, b_name) = (format!("res{i}.a"), format!("res{i}.b"));
            let mut a = net.res[i].a.clone();
            let mut b = net.res[i].b.clone();
            load_unit(&a_name, &mut a)?;
            load_unit(&b_name, &mut b)?;
            net.res[i].a = a;
            net.res[i].b = b;
        }
        load_unit("dec1", &mut net.dec1)?;
        load_unit("dec2", &mut net.dec2)?;
        for (field, param) in [
            ("out.weight", &mut net.out.weight),
            ("out.bias", &mut net.out.bias),
        ] {
            let t = find(field)?;
            if t.shape() != param.value.shape() {
                return Err(fas_nn::NnError::ShapeMismatch {
                    name: field.to_string(),
                    expected: param.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                }
                .into());
            }
            param.value = t.clone();
        }
        Ok(net)
    }

    /// sha256 over the serialized tensors: a content fingerprint of the model.
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
