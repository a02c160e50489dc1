use crate::param::Param;
use crate::{Tensor2, Tensor4};
use ndarray::{Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// 2x2 max pooling with stride 2. Returns the pooled map and the winning
/// offset (0..4) per output element for the backward scatter.
pub fn max_pool2(x: &Tensor4) -> (Tensor4, Array4<u8>) {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Array4::zeros((n, c, ho, wo));
    let mut idx = Array4::zeros((n, c, ho, wo));
    for i in 0..n {
        for ci in 0..c {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut bk = 0u8;
                    for k in 0..4usize {
                        let v = x[[i, ci, 2 * oi + k / 2, 2 * oj + k % 2]];
                        if v > best {
                            best = v;
                            bk = k as u8;
                        }
                    }
                    y[[i, ci, oi, oj]] = best;
                    idx[[i, ci, oi, oj]] = bk;
                }
            }
        }
    }
    (y, idx)
}

pub fn max_pool2_backward(gy: &Tensor4, idx: &Array4<u8>, in_h: usize, in_w: usize) -> Tensor4 {
    let (n, c, ho, wo) = gy.dim();
    let mut gx = Array4::zeros((n, c, in_h, in_w));
    for i in 0..n {
        for ci in 0..c {
            for oi in 0..ho {
                for oj in 0..wo {
                    let k = idx[[i, ci, oi, oj]] as usize;
                    gx[[i, ci, 2 * oi + k / 2, 2 * oj + k % 2]] += gy[[i, ci, oi, oj]];
                }
            }
        }
    }
    gx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::zeros((n, c, 2 * h, 2 * w));
    for i in 0..n {
        for ci in 0..c {
            for ii in 0..h {
                for jj in 0..w {
                    let v = x[[i, ci, ii, jj]];
                    y[[i, ci, 2 * ii, 2 * jj]] = v;
                    y[[i, ci, 2 * ii + 1, 2 * jj]] = v;
                    y[[i, ci, 2 * ii, 2 * jj + 1]] = v;
                    y[[i, ci, 2 * ii + 1, 2 * jj + 1]] = v;
                }
            }
        }
    }
    y
}

pub fn upsample2_backward(gy: &Tensor4) -> Tensor4 {
    let (n, c, h2, w2) = gy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for ci in 0..c {
            for ii in 0..h {
                for jj in 0..w {
                    gx[[i, ci, ii, jj]] = gy[[i, ci, 2 * ii, 2 * jj]]
                        + gy[[i, ci, 2 * ii + 1, 2 * jj]]
                        + gy[[i, ci, 2 * ii, 2 * jj + 1]]
                        + gy[[i, ci, 2 * ii + 1, 2 * jj + 1]];
                }
            }
        }
    }
    gx
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor4, gy: &Tensor4) -> Tensor4 {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Backward through sigmoid given its *output* y.
pub fn sigmoid_backward(y: &Tensor4, gy: &Tensor4) -> Tensor4 {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(y).for_each(|g, &v| {
        *g *= v * (1.0 - v);
    });
    gx
}

/// Inverted-dropout mask: entries are 0 or 1/(1-p).
pub fn dropout_mask(
    rng: &mut ChaCha12Rng,
    shape: &[usize],
    p: f64,
) -> ndarray::ArrayD<f64> {
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    ndarray::ArrayD::from_shape_simple_fn(ndarray::IxDyn(shape), || {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    })
}

/// Fully connected layer, `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param, // [out, in]
    pub bias: Param,   // [out]
    pub in_f: usize,
    pub out_f: usize,
}

impl Dense {
    pub fn new(in_f: usize, out_f: usize) -> Self {
        Self {
            weight: Param::zeros(&[out_f, in_f]),
            bias: Param::zeros(&[out_f]),
            in_f,
            out_f,
        }
    }

    pub fn init_he(&mut self, rng: &mut ChaCha12Rng) {
        let std = (2.0 / self.in_f as f64).sqrt();
        for w in self.weight.value.iter_mut() {
            *w = crate::conv::gauss(rng) * std;
        }
        self.bias.value.fill(0.0);
    }

    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let mut y = x.dot(&w.t());
        for mut row in y.outer_iter_mut() {
            row += &self
                .bias
                .value
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor2, gy: &Tensor2) -> Tensor2 {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned();
        let gw: Array2<f64> = gy.t().dot(x);
        self.weight.grad += &gw.into_dyn();
        let gb = gy.sum_axis(ndarray::Axis(0));
        self.bias.grad += &gb.into_dyn();
        gy.dot(&w)
    }
}
