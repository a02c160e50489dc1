use crate::param::Param;
use crate::Tensor4;
use ndarray::{Array2, Array4, ArrayView3, Ix4};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// 2-D convolution with zero padding, square kernel, equal stride in both
/// axes. Forward and backward are im2col + GEMM; the backward pass can skip
/// weight gradients for frozen networks.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param, // [out_ch, in_ch, k, k]
    pub bias: Param,   // [out_ch]
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: Param::zeros(&[out_ch, in_ch, k, k]),
            bias: Param::zeros(&[out_ch]),
            in_ch,
            out_ch,
            k,
            stride,
            pad,
        }
    }

    /// Kaiming-normal weights, zero bias.
    pub fn init_he(&mut self, rng: &mut ChaCha12Rng) {
        let std = (2.0 / (self.in_ch * self.k * self.k) as f64).sqrt();
        for w in self.weight.value.iter_mut() {
            *w = gauss(rng) * std;
        }
        self.bias.value.fill(0.0);
    }

    /// Scale all weights; small output layers start near zero this way.
    pub fn scale_weights(&mut self, factor: f64) {
        self.weight.value.mapv_inplace(|w| w * factor);
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "conv input channels");
        let (ho, wo) = self.out_hw(h, w);
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape_with_order((self.out_ch, self.in_ch * self.k * self.k))
            .unwrap();
        let bias = &self.bias.value;
        let mut y = Array4::zeros((n, self.out_ch, ho, wo));
        for i in 0..n {
            let cols = im2col(x.index_axis(ndarray::Axis(0), i), self.k, self.stride, self.pad);
            let mut y2 = w2.dot(&cols); // [out_ch, ho*wo]
            for (o, mut row) in y2.outer_iter_mut().enumerate() {
                row += bias[o];
            }
            y.index_axis_mut(ndarray::Axis(0), i).assign(
                &y2.into_shape_with_order((self.out_ch, ho, wo)).unwrap(),
            );
        }
        y
    }

    /// Backprop through the layer, accumulating weight/bias gradients.
    pub fn backward(&mut self, x: &Tensor4, gy: &Tensor4) -> Tensor4 {
        self.backward_impl(x, gy, true)
    }

    /// Input gradient only; used when the layer is frozen.
    pub fn backward_data(&self, gy: &Tensor4, in_h: usize, in_w: usize) -> Tensor4 {
        let (n, oc, ho, wo) = gy.dim();
        assert_eq!(oc, self.out_ch);
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape_with_order((self.out_ch, self.in_ch * self.k * self.k))
            .unwrap();
        let mut gx = Array4::zeros((n, self.in_ch, in_h, in_w));
        for i in 0..n {
            let gy2 = gy
                .index_axis(ndarray::Axis(0), i)
                .into_shape_with_order((oc, ho * wo))
                .unwrap();
            let gcols = w2.t().dot(&gy2);
            col2im(
                &gcols,
                gx.index_axis_mut(ndarray::Axis(0), i),
                self.k,
                self.stride,
                self.pad,
            );
        }
        gx
    }

    fn backward_impl(&mut self, x: &Tensor4, gy: &Tensor4, with_weights: bool) -> Tensor4 {
        let (n, ..) = x.dim();
        let (_, oc, ho, wo) = gy.dim();
        assert_eq!(oc, self.out_ch);
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape_with_order((self.out_ch, self.in_ch * self.k * self.k))
            .unwrap()
            .to_owned();
        let mut gw2 = Array2::<f64>::zeros((self.out_ch, self.in_ch * self.k * self.k));
        let mut gb = ndarray::Array1::<f64>::zeros(self.out_ch);
        let mut gx = Array4::zeros(x.raw_dim());
        for i in 0..n {
            let gy2 = gy
                .index_axis(ndarray::Axis(0), i)
                .into_shape_with_order((oc, ho * wo))
                .unwrap();
            let cols = im2col(x.index_axis(ndarray::Axis(0), i), self.k, self.stride, self.pad);
            if with_weights {
                gw2 += &gy2.dot(&cols.t());
                for (o, row) in gy2.outer_iter().enumerate() {
                    gb[o] += row.sum();
                }
            }
            let gcols = w2.t().dot(&gy2);
            col2im(
                &gcols,
                gx.index_axis_mut(ndarray::Axis(0), i),
                self.k,
                self.stride,
                self.pad,
            );
        }
        if with_weights {
            let gw = gw2
                .into_shape_with_order((self.out_ch, self.in_ch, self.k, self.k))
                .unwrap();
            self.weight.grad += &gw.into_dyn();
            self.bias.grad += &gb.into_dyn();
        }
        gx
    }
}

/// Unroll one sample into `[in_ch*k*k, out_h*out_w]` patch columns.
pub fn im2col(x: ArrayView3<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut cols = Array2::<f64>::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        let plane = x.index_axis(ndarray::Axis(0), ci);
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let mut out_row = cols.row_mut(row);
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue; // stays zero
                    }
                    let src = plane.row(ii as usize);
                    let base = oi * wo;
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj >= 0 && jj < w as isize {
                            out_row[base + oj] = src[jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add patch-column gradients back onto the input plane.
fn col2im(
    gcols: &Array2<f64>,
    mut gx: ndarray::ArrayViewMut3<f64>,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let (c, h, w) = gx.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    for ci in 0..c {
        let mut plane = gx.index_axis_mut(ndarray::Axis(0), ci);
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let grow = gcols.row(row);
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let base = oi * wo;
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj >= 0 && jj < w as isize {
                            plane[[ii as usize, jj as usize]] += grow[base + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Box-Muller standard normal; keeps us off distribution crates whose
/// sampling internals could shift between versions.
pub fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

#[allow(unused)]
fn _assert_send_sync(c: Conv2d) -> impl Send + Sync {
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use ndarray::Array4;

    fn rand_t4(rng: &mut ChaCha12Rng, shape: (usize, usize, usize, usize)) -> Tensor4 {
        Array4::from_shape_simple_fn(shape, || rng.random::<f64>() - 0.5)
    }

    // scalar probe loss: sum(y * r)
    fn probe_loss(y: &Tensor4, r: &Tensor4) -> f64 {
        (y * r).sum()
    }

    #[test]
    fn forward_shape_and_identity_kernel() {
        let mut conv = Conv2d::new(1, 1, 3, 1, 1);
        conv.weight.value[[0, 0, 1, 1]] = 1.0; // delta kernel
        let mut rng = seeded_rng(3);
        let x = rand_t4(&mut rng, (2, 1, 5, 7));
        let y = conv.forward(&x);
        assert_eq!(y.dim(), (2, 1, 5, 7));
        assert!(y.iter().zip(x.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn strided_output_size() {
        let conv = Conv2d::new(3, 8, 3, 2, 1);
        assert_eq!(conv.out_hw(32, 32), (16, 16));
        assert_eq!(conv.out_hw(9, 9), (5, 5));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for &(stride, pad, k) in &[(1usize, 1usize, 3usize), (2, 1, 3), (1, 4, 9)] {
            let mut rng = seeded_rng(11);
            let mut conv = Conv2d::new(2, 3, k, stride, pad);
            conv.init_he(&mut rng);
            let x = rand_t4(&mut rng, (2, 2, 6, 6));
            let (ho, wo) = conv.out_hw(6, 6);
            let r = rand_t4(&mut rng, (2, 3, ho, wo));

            let y = conv.forward(&x);
            let gx = conv.backward(&x, &r);

            let eps = 1e-6;
            // input grads
            let mut xp = x.clone();
            for idx in [[0, 0, 0, 0], [1, 1, 3, 2], [0, 1, 5, 5]] {
                let orig = xp[idx];
                xp[idx] = orig + eps;
                let lp = probe_loss(&conv.forward(&xp), &r);
                xp[idx] = orig - eps;
                let lm = probe_loss(&conv.forward(&xp), &r);
                xp[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                assert!(
                    (gx[idx] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                    "gx mismatch k{k} s{stride}: {} vs {}",
                    gx[idx],
                    fd
                );
            }
            // weight grads
            for widx in [[0usize, 0, 0, 0], [2, 1, k - 1, k - 1]] {
                let orig = conv.weight.value[ndarray::IxDyn(&widx)];
                conv.weight.value[ndarray::IxDyn(&widx)] = orig + eps;
                let lp = probe_loss(&conv.forward(&x), &r);
                conv.weight.value[ndarray::IxDyn(&widx)] = orig - eps;
                let lm = probe_loss(&conv.forward(&x), &r);
                conv.weight.value[ndarray::IxDyn(&widx)] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let got = conv.weight.grad[ndarray::IxDyn(&widx)];
                assert!(
                    (got - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                    "gw mismatch: {got} vs {fd}"
                );
            }
            // bias grad
            let orig = conv.bias.value[0];
            conv.bias.value[0] = orig + eps;
            let lp = probe_loss(&conv.forward(&x), &r);
            conv.bias.value[0] = orig - eps;
            let lm = probe_loss(&conv.forward(&x), &r);
            conv.bias.value[0] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((conv.bias.grad[0] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            let _ = y;
        }
    }

    #[test]
    fn backward_data_equals_backward_input_grad() {
        let mut rng = seeded_rng(5);
        let mut conv = Conv2d::new(3, 4, 3, 2, 1);
        conv.init_he(&mut rng);
        let x = rand_t4(&mut rng, (1, 3, 8, 8));
        let y = conv.forward(&x);
        let gy = rand_t4(&mut rng, y.dim());
        let gx1 = conv.backward(&x, &gy);
        let gx2 = conv.backward_data(&gy, 8, 8);
        assert_eq!(gx1, gx2);
    }
}
