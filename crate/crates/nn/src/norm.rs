use crate::param::Param;
use crate::{Tensor2, Tensor4};
use ndarray::{Array1, Array2, Array4};

const EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization with learnable scale/shift.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub gamma: Param, // [c]
    pub beta: Param,  // [c]
    pub channels: usize,
}

pub struct InstanceNormCache {
    xhat: Tensor4,
    inv_std: Array2<f64>, // [n, c]
}

impl InstanceNorm {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Param::zeros(&[channels]);
        gamma.value.fill(1.0);
        Self {
            gamma,
            beta: Param::zeros(&[channels]),
            channels,
        }
    }

    pub fn forward(&self, x: &Tensor4) -> (Tensor4, InstanceNormCache) {
        let (n, c, h, w) = x.dim();
        let m = (h * w) as f64;
        let mut xhat = Array4::zeros((n, c, h, w));
        let mut inv_std = Array2::zeros((n, c));
        for i in 0..n {
            for ci in 0..c {
                let plane = x.slice(ndarray::s![i, ci, .., ..]);
                let mean = plane.sum() / m;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                let is = 1.0 / (var + EPS).sqrt();
                inv_std[[i, ci]] = is;
                let g = self.gamma.value[ci];
                let b = self.beta.value[ci];
                let mut out = xhat.slice_mut(ndarray::s![i, ci, .., ..]);
                ndarray::Zip::from(&mut out).and(&plane).for_each(|o, &v| {
                    *o = (v - mean) * is;
                });
                let _ = (g, b);
            }
        }
        let mut y = xhat.clone();
        for i in 0..n {
            for ci in 0..c {
                let g = self.gamma.value[ci];
                let b = self.beta.value[ci];
                y.slice_mut(ndarray::s![i, ci, .., ..])
                    .mapv_inplace(|v| g * v + b);
            }
        }
        (y, InstanceNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &InstanceNormCache, gy: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = gy.dim();
        let m = (h * w) as f64;
        let mut gx = Array4::zeros((n, c, h, w));
        for i in 0..n {
            for ci in 0..c {
                let xh = cache.xhat.slice(ndarray::s![i, ci, .., ..]);
                let g = gy.slice(ndarray::s![i, ci, .., ..]);
                let sum_g = g.sum();
                let sum_gx = (&g * &xh).sum();
                self.gamma.grad[ci] += sum_gx;
                self.beta.grad[ci] += sum_g;
                let gamma = self.gamma.value[ci];
                let is = cache.inv_std[[i, ci]];
                let mean_g = sum_g / m;
                let mean_gx = sum_gx / m;
                let mut out = gx.slice_mut(ndarray::s![i, ci, .., ..]);
                ndarray::Zip::from(&mut out)
                    .and(&g)
                    .and(&xh)
                    .for_each(|o, &gv, &xv| {
                        *o = gamma * is * (gv - mean_g - xv * mean_gx);
                    });
            }
        }
        gx
    }
}

/// Channel-wise batch normalization over `(N, H, W)` with running statistics.
/// Only scale and shift receive gradients; the running estimates are part of
/// the stored model state.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub channels: usize,
}

pub struct BatchNorm2dCache {
    xhat: Tensor4,
    inv_std: Array1<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Param::zeros(&[channels]);
        gamma.value.fill(1.0);
        Self {
            gamma,
            beta: Param::zeros(&[channels]),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            channels,
        }
    }

    /// Trainable + stored statistics, the way the layer is usually audited.
    pub fn param_count(&self) -> usize {
        4 * self.channels
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> (Tensor4, BatchNorm2dCache) {
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f64;
        let mut xhat = Array4::zeros((n, c, h, w));
        let mut inv_std = Array1::zeros(c);
        for ci in 0..c {
            let lane = x.slice(ndarray::s![.., ci, .., ..]);
            let mean = lane.sum() / m;
            let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            self.running_mean[ci] = (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
            self.running_var[ci] = (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[ci] = is;
            let mut out = xhat.slice_mut(ndarray::s![.., ci, .., ..]);
            ndarray::Zip::from(&mut out).and(&lane).for_each(|o, &v| {
                *o = (v - mean) * is;
            });
        }
        let mut y = xhat.clone();
        for ci in 0..c {
            let g = self.gamma.value[ci];
            let b = self.beta.value[ci];
            y.slice_mut(ndarray::s![.., ci, .., ..])
                .mapv_inplace(|v| g * v + b);
        }
        (y, BatchNorm2dCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Tensor4) -> Tensor4 {
        let (_, c, _, _) = x.dim();
        let mut y = x.clone();
        for ci in 0..c {
            let is = 1.0 / (self.running_var[ci] + EPS).sqrt();
            let mean = self.running_mean[ci];
            let g = self.gamma.value[ci];
            let b = self.beta.value[ci];
            y.slice_mut(ndarray::s![.., ci, .., ..])
                .mapv_inplace(|v| g * (v - mean) * is + b);
        }
        y
    }

    pub fn backward(&mut self, cache: &BatchNorm2dCache, gy: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = gy.dim();
        let m = (n * h * w) as f64;
        let mut gx = Array4::zeros((n, c, h, w));
        for ci in 0..c {
            let xh = cache.xhat.slice(ndarray::s![.., ci, .., ..]);
            let g = gy.slice(ndarray::s![.., ci, .., ..]);
            let sum_g = g.sum();
            let sum_gx = (&g * &xh).sum();
            self.gamma.grad[ci] += sum_gx;
            self.beta.grad[ci] += sum_g;
            let gamma = self.gamma.value[ci];
            let is = cache.inv_std[ci];
            let mean_g = sum_g / m;
            let mean_gx = sum_gx / m;
            let mut out = gx.slice_mut(ndarray::s![.., ci, .., ..]);
            ndarray::Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gv, &xv| {
                    *o = gamma * is * (gv - mean_g - xv * mean_gx);
                });
        }
        gx
    }
}

/// Batch normalization over feature vectors `[N, F]`.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub features: usize,
}

pub struct BatchNorm1dCache {
    xhat: Tensor2,
    inv_std: Array1<f64>,
}

impl BatchNorm1d {
    pub fn new(features: usize) -> Self {
        let mut gamma = Param::zeros(&[features]);
        gamma.value.fill(1.0);
        Self {
            gamma,
            beta: Param::zeros(&[features]),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: 0.1,
            features,
        }
    }

    pub fn param_count(&self) -> usize {
        4 * self.features
    }

    pub fn forward_train(&mut self, x: &Tensor2) -> (Tensor2, BatchNorm1dCache) {
        let (n, f) = x.dim();
        let m = n as f64;
        let mut xhat = Array2::zeros((n, f));
        let mut inv_std = Array1::zeros(f);
        for fi in 0..f {
            let col = x.column(fi);
            let mean = col.sum() / m;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            self.running_mean[fi] = (1.0 - self.momentum) * self.running_mean[fi] + self.momentum * mean;
            self.running_var[fi] = (1.0 - self.momentum) * self.running_var[fi] + self.momentum * var;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[fi] = is;
            for i in 0..n {
                xhat[[i, fi]] = (x[[i, fi]] - mean) * is;
            }
        }
        let mut y = xhat.clone();
        for fi in 0..f {
            let g = self.gamma.value[fi];
            let b = self.beta.value[fi];
            y.column_mut(fi).mapv_inplace(|v| g * v + b);
        }
        (y, BatchNorm1dCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Tensor2) -> Tensor2 {
        let mut y = x.clone();
        for fi in 0..self.features {
            let is = 1.0 / (self.running_var[fi] + EPS).sqrt();
            let mean = self.running_mean[fi];
            let g = self.gamma.value[fi];
            let b = self.beta.value[fi];
            y.column_mut(fi).mapv_inplace(|v| g * (v - mean) * is + b);
        }
        y
    }

    pub fn backward(&mut self, cache: &BatchNorm1dCache, gy: &Tensor2) -> Tensor2 {
        let (n, f) = gy.dim();
        let m = n as f64;
        let mut gx = Array2::zeros((n, f));
        for fi in 0..f {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for i in 0..n {
                sum_g += gy[[i, fi]];
                sum_gx += gy[[i, fi]] * cache.xhat[[i, fi]];
            }
            self.gamma.grad[fi] += sum_gx;
            self.beta.grad[fi] += sum_g;
            let gamma = self.gamma.value[fi];
            let is = cache.inv_std[fi];
            for i in 0..n {
                gx[[i, fi]] = gamma
                    * is
                    * (gy[[i, fi]] - sum_g / m - cache.xhat[[i, fi]] * sum_gx / m);
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    #[test]
    fn instance_norm_normalizes_each_sample_channel() {
        let mut rng = seeded_rng(1);
        let x = Array4::from_shape_simple_fn((2, 3, 4, 4), || rng.random::<f64>() * 3.0 + 1.0);
        let norm = InstanceNorm::new(3);
        let (y, _) = norm.forward(&x);
        for i in 0..2 {
            for c in 0..3 {
                let plane = y.slice(ndarray::s![i, c, .., ..]);
                let mean = plane.sum() / 16.0;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-3); // eps skews it slightly
            }
        }
    }

    #[test]
    fn instance_norm_gradcheck() {
        let mut rng = seeded_rng(8);
        let x = Array4::from_shape_simple_fn((1, 2, 3, 3), || rng.random::<f64>());
        let r = Array4::from_shape_simple_fn((1, 2, 3, 3), || rng.random::<f64>() - 0.5);
        let mut norm = InstanceNorm::new(2);
        norm.gamma.value[0] = 1.3;
        norm.beta.value[1] = -0.2;
        let (_, cache) = norm.forward(&x);
        let gx = norm.backward(&cache, &r);
        let eps = 1e-6;
        for idx in [[0usize, 0, 0, 0], [0, 1, 2, 1]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let (yp, _) = norm.forward(&xp);
            xp[idx] -= 2.0 * eps;
            let (ym, _) = norm.forward(&xp);
            let fd = ((&yp * &r).sum() - (&ym * &r).sum()) / (2.0 * eps);
            assert!(
                (gx[idx] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "in gradcheck {:?}: {} vs {}",
                idx,
                gx[idx],
                fd
            );
        }
    }

    #[test]
    fn batch_norm_modes_differ_then_converge() {
        let mut rng = seeded_rng(3);
        let x = Array4::from_shape_simple_fn((4, 2, 3, 3), || rng.random::<f64>() * 2.0);
        let mut bn = BatchNorm2d::new(2);
        let (train_y, _) = bn.forward_train(&x);
        let eval_y = bn.forward_eval(&x);
        assert_ne!(train_y, eval_y);
        // after many passes the running stats approach the batch stats
        for _ in 0..500 {
            let _ = bn.forward_train(&x);
        }
        let eval_y = bn.forward_eval(&x);
        let diff = (&eval_y - &train_y).mapv(f64::abs).sum() / eval_y.len() as f64;
        assert!(diff < 1e-3, "diff {diff}");
    }

    #[test]
    fn batch_norm1d_gradcheck() {
        let mut rng = seeded_rng(12);
        let x = Array2::from_shape_simple_fn((5, 3), || rng.random::<f64>());
        let r = Array2::from_shape_simple_fn((5, 3), || rng.random::<f64>() - 0.5);
        let mut bn = BatchNorm1d::new(3);
        let (_, cache) = bn.forward_train(&x);
        let gx = bn.backward(&cache, &r);
        let eps = 1e-6;
        let idx = [2usize, 1];
        let mut xp = x.clone();
        xp[idx] += eps;
        let mut bn2 = BatchNorm1d::new(3);
        let (yp, _) = bn2.forward_train(&xp);
        xp[idx] -= 2.0 * eps;
        let (ym, _) = bn2.forward_train(&xp);
        let fd = ((&yp * &r).sum() - (&ym * &r).sum()) / (2.0 * eps);
        assert!((gx[idx] - fd).abs() < 1e-5 * (1.0 + fd.abs()));
    }
}
