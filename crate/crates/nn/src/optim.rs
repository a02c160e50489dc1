use crate::param::Param;
use ndarray::ArrayD;

/// Stochastic gradient descent with classical momentum.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<ArrayD<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
        }
        assert_eq!(self.velocity.len(), params.len());
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            ndarray::Zip::from(v.view_mut())
                .and(&p.grad)
                .for_each(|vel, &g| {
                    *vel = self.momentum * *vel + g;
                });
            ndarray::Zip::from(&mut p.value)
                .and(v.view())
                .for_each(|w, &vel| {
                    *w -= self.lr * vel;
                });
        }
    }
}

/// Adam with bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            ndarray::Zip::from(m.view_mut())
                .and(&p.grad)
                .for_each(|mi, &g| {
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                });
            ndarray::Zip::from(v.view_mut())
                .and(&p.grad)
                .for_each(|vi, &g| {
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                });
            ndarray::Zip::from(&mut p.value)
                .and(m.view())
                .and(v.view())
                .for_each(|w, &mi, &vi| {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // minimize (w - 3)^2 with both optimizers
    fn quad_grad(p: &mut Param) {
        let w = p.value[[0]];
        p.grad[[0]] = 2.0 * (w - 3.0);
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        let mut p = Param::zeros(&[1]);
        let mut opt = Sgd::new(0.1, 0.9);
        for _ in 0..800 {
            p.zero_grad();
            quad_grad(&mut p);
            opt.step(&mut [&mut p]);
        }
        assert!((p.value[[0]] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut p = Param::zeros(&[1]);
        let mut opt = Adam::new(0.1);
        for _ in 0..600 {
            p.zero_grad();
            quad_grad(&mut p);
            opt.step(&mut [&mut p]);
        }
        assert!((p.value[[0]] - 3.0).abs() < 1e-5);
    }
}
