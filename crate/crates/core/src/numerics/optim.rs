//! Parameter update rules.

use ndarray::Array2;

/// Plain gradient descent: `p -= lr * g`.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, param: &mut Array2<f64>, grad: &Array2<f64>) {
        param.scaled_add(-self.lr, grad);
    }
}

/// Adam with bias correction. Each parameter tensor owns a slot.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    /// Advance the step counter; call once before the per-slot updates.
    pub fn tick(&mut self) {
        self.t += 1;
    }

    pub fn step(&mut self, slot: usize, param: &mut Array2<f64>, grad: &Array2<f64>) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t.max(1));
        let c2 = 1.0 - b2.powi(self.t.max(1));
        let step = self.lr;
        let eps = self.eps;
        ndarray::Zip::from(param)
            .and(&mut self.m[slot])
            .and(&mut self.v[slot])
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
}
