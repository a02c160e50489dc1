//! Cross-module integration: the public layer/optimizer/loss/archive surface
//! assembled into a small training loop, plus persistence round-trips.

use fas_nn::layers::{relu, relu_backward};
use fas_nn::{
    derive_seed, max_pool2, max_pool2_backward, read_archive, seeded_rng, softmax_cross_entropy,
    write_archive, Adam, Conv2d, Dense, Tensor2, Tensor4,
};
use ndarray::{Array4, Axis};
use rand::Rng;

const SIDE: usize = 8;

/// Class 0: vertical stripes. Class 1: horizontal stripes. Mild seeded noise.
fn striped_batch(n: usize, seed: u64) -> (Tensor4, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let mut x = Array4::zeros((n, 1, SIDE, SIDE));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        labels.push(label);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::PI);
        for y in 0..SIDE {
            for xx in 0..SIDE {
                let t = if label == 0 { xx } else { y } as f64;
                let v = 0.5 + 0.4 * (t * 1.3 + phase).sin() + rng.random_range(-0.05..0.05);
                x[[i, 0, y, xx]] = v;
            }
        }
    }
    (x, labels)
}

struct TinyNet {
    conv: Conv2d,
    fc: Dense,
}

impl TinyNet {
    fn new(seed: u64) -> Self {
        let mut conv = Conv2d::new(1, 4, 3, 1, 1);
        conv.init_he(&mut seeded_rng(derive_seed(seed, "conv")));
        let mut fc = Dense::new(4 * 4 * 4, 2);
        fc.init_he(&mut seeded_rng(derive_seed(seed, "fc")));
        TinyNet { conv, fc }
    }

    fn logits(&self, x: &Tensor4) -> Tensor2 {
        let (pooled, _) = max_pool2(&relu(&self.conv.forward(x)));
        let n = pooled.dim().0;
        let flat = pooled.into_shape_with_order((n, 4 * 4 * 4)).unwrap();
        self.fc.forward(&flat)
    }

    /// One full-batch step; returns the loss before the update.
    fn train_step(&mut self, x: &Tensor4, labels: &[usize], optim: &mut Adam) -> f64 {
        let a = self.conv.forward(x);
        let r = relu(&a);
        let (pooled, idx) = max_pool2(&r);
        let n = pooled.dim().0;
        let flat: Tensor2 = pooled.clone().into_shape_with_order((n, 64)).unwrap();
        let logits = self.fc.forward(&flat);
        let (loss, glogits) = softmax_cross_entropy(&logits, labels);

        self.conv.weight.zero_grad();
        self.conv.bias.zero_grad();
        self.fc.weight.zero_grad();
        self.fc.bias.zero_grad();
        let gflat = self.fc.backward(&flat, &glogits);
        let gpool: Tensor4 = gflat.into_shape_with_order((n, 4, 4, 4)).unwrap();
        let gr = max_pool2_backward(&gpool, &idx, SIDE, SIDE);
        let ga = relu_backward(&a, &gr);
        self.conv.backward(x, &ga);

        let mut params = vec![
            &mut self.conv.weight,
            &mut self.conv.bias,
            &mut self.fc.weight,
            &mut self.fc.bias,
        ];
        optim.step(&mut params);
        loss
    }
}

fn accuracy(net: &TinyNet, x: &Tensor4, labels: &[usize]) -> f64 {
    let logits = net.logits(x);
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &l)| (row[1] > row[0]) == (l == 1))
        .count();
    correct as f64 / labels.len() as f64
}

#[test]
fn stack_learns_a_separable_task_and_round_trips_through_the_archive() {
    let (train_x, train_y) = striped_batch(32, 11);
    let (test_x, test_y) = striped_batch(16, 99);

    let mut net = TinyNet::new(5);
    let mut optim = Adam::new(1e-2);
    let mut first = f64::NAN;
    let mut last = f64::NAN;
    for step in 0..60 {
        let loss = net.train_step(&train_x, &train_y, &mut optim);
        if step == 0 {
            first = loss;
        }
        last = loss;
    }
    assert!(last < first * 0.2, "loss barely moved: {first} -> {last}");
    assert!(accuracy(&net, &test_x, &test_y) >= 0.9);

    // Persist through the named-tensor archive and rebuild.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.ntar");
    let tensors = vec![
        ("conv.weight".to_string(), net.conv.weight.value.clone()),
        ("conv.bias".to_string(), net.conv.bias.value.clone()),
        ("fc.weight".to_string(), net.fc.weight.value.clone()),
        ("fc.bias".to_string(), net.fc.bias.value.clone()),
    ];
    let checksum = write_archive(&path, &tensors).unwrap();
    let (loaded, checksum2) = read_archive(&path).unwrap();
    assert_eq!(checksum, checksum2);

    let mut rebuilt = TinyNet::new(0);
    for t in loaded {
        match t.name.as_str() {
            "conv.weight" => rebuilt.conv.weight.value = t.data,
            "conv.bias" => rebuilt.conv.bias.value = t.data,
            "fc.weight" => rebuilt.fc.weight.value = t.data,
            "fc.bias" => rebuilt.fc.bias.value = t.data,
            other => panic!("unexpected tensor {other}"),
        }
    }
    let a = net.logits(&test_x);
    let b = rebuilt.logits(&test_x);
    assert_eq!(a, b, "reloaded net must be bit-identical");
}

#[test]
fn composite_backward_matches_finite_differences() {
    let (x, labels) = striped_batch(4, 21);
    let mut net = TinyNet::new(3);

    // Analytic gradients through the whole stack.
    let a = net.conv.forward(&x);
    let r = relu(&a);
    let (pooled, idx) = max_pool2(&r);
    let flat: Tensor2 = pooled.into_shape_with_order((4, 64)).unwrap();
    let logits = net.fc.forward(&flat);
    let (_, glogits) = softmax_cross_entropy(&logits, &labels);
    net.conv.weight.zero_grad();
    net.conv.bias.zero_grad();
    net.fc.weight.zero_grad();
    net.fc.bias.zero_grad();
    let gflat = net.fc.backward(&flat, &glogits);
    let gpool: Tensor4 = gflat.into_shape_with_order((4, 4, 4, 4)).unwrap();
    let gr = max_pool2_backward(&gpool, &idx, SIDE, SIDE);
    let ga = relu_backward(&a, &gr);
    net.conv.backward(&x, &ga);

    let loss_at = |net: &TinyNet| {
        let (l, _) = softmax_cross_entropy(&net.logits(&x), &labels);
        l
    };
    let eps = 1e-6;
    // Probe a spread of conv and dense weight coordinates.
    for k in [0usize, 7, 17, 35] {
        let analytic = net.conv.weight.grad.as_slice().unwrap()[k];
        let orig = net.conv.weight.value.as_slice().unwrap()[k];
        net.conv.weight.value.as_slice_mut().unwrap()[k] = orig + eps;
        let up = loss_at(&net);
        net.conv.weight.value.as_slice_mut().unwrap()[k] = orig - eps;
        let down = loss_at(&net);
        net.conv.weight.value.as_slice_mut().unwrap()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(
            ((analytic - numeric) / denom).abs() < 1e-5,
            "conv w[{k}]: analytic {analytic}, numeric {numeric}"
        );
    }
    for k in [0usize, 63, 100] {
        let analytic = net.fc.weight.grad.as_slice().unwrap()[k];
        let orig = net.fc.weight.value.as_slice().unwrap()[k];
        net.fc.weight.value.as_slice_mut().unwrap()[k] = orig + eps;
        let up = loss_at(&net);
        net.fc.weight.value.as_slice_mut().unwrap()[k] = orig - eps;
        let down = loss_at(&net);
        net.fc.weight.value.as_slice_mut().unwrap()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(
            ((analytic - numeric) / denom).abs() < 1e-5,
            "fc w[{k}]: analytic {analytic}, numeric {numeric}"
        );
    }
}
