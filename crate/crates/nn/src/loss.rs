use crate::Tensor2;
use ndarray::Array2;

/// Two-or-more-class softmax cross entropy, mean-reduced over the batch.
/// Returns the loss and the gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor2, labels: &[usize]) -> (f64, Tensor2) {
    let (n, k) = logits.dim();
    assert_eq!(n, labels.len());
    let mut probs = Array2::zeros((n, k));
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..k {
            let e = (row[j] - max).exp();
            probs[[i, j]] = e;
            z += e;
        }
        for j in 0..k {
            probs[[i, j]] /= z;
        }
        loss -= probs[[i, labels[i]]].max(1e-300).ln();
    }
    loss /= n as f64;
    let mut grad = probs;
    for i in 0..n {
        grad[[i, labels[i]]] -= 1.0;
    }
    grad.mapv_inplace(|v| v / n as f64);
    (loss, grad)
}

/// Softmax probabilities for inference.
pub fn softmax(logits: &Tensor2) -> Tensor2 {
    let (n, k) = logits.dim();
    let mut probs = Array2::zeros((n, k));
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..k {
            let e = (row[j] - max).exp();
            probs[[i, j]] = e;
            z += e;
        }
        for j in 0..k {
            probs[[i, j]] /= z;
        }
    }
    probs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_sum_to_one() {
        let logits = ndarray::array![[2.0, -1.0], [0.0, 0.0], [100.0, 103.0]];
        let p = softmax(&logits);
        for row in p.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((p[[1, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradcheck() {
        let logits = ndarray::array![[0.3, -0.7], [1.2, 0.4], [-0.1, 0.9]];
        let labels = [0usize, 1, 1];
        let (_, grad) = softmax_cross_entropy(&logits, &labels);
        let eps = 1e-6;
        for idx in [[0usize, 0], [1, 1], [2, 0]] {
            let mut lp = logits.clone();
            lp[idx] += eps;
            let (a, _) = softmax_cross_entropy(&lp, &labels);
            lp[idx] -= 2.0 * eps;
            let (b, _) = softmax_cross_entropy(&lp, &labels);
            let fd = (a - b) / (2.0 * eps);
            assert!((grad[idx] - fd).abs() < 1e-8);
        }
    }
}
