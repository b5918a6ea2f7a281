//! First-order optimizers over a [`crate::field::ParamVector`] with two learning-rate
//! groups: hash-table entries and MLP weights.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Per-group step sizes. Parameters `[0, split)` use `table_rate`, the
/// rest `mlp_rate`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateGroups {
    pub split: usize,
    pub table_rate: f64,
    pub mlp_rate: f64,
}

impl RateGroups {
    pub fn rate(&self, index: usize) -> f64 {
        if index < self.split {
            self.table_rate
        } else {
            self.mlp_rate
        }
    }

    fn ranges(&self, len: usize) -> [(std::ops::Range<usize>, f64); 2] {
        let split = self.split.min(len);
        [(0..split, self.table_rate), (split..len, self.mlp_rate)]
    }
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(len, beta1, beta2, epsilon)),
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], rates: &RateGroups) {
        match self {
            Optimizer::Sgd => {
                for (range, rate) in rates.ranges(params.len()) {
                    if rate == 0.0 {
                        continue;
                    }
                    let rate = rate as f32;
                    for (p, &g) in params[range.clone()].iter_mut().zip(&grad[range]) {
                        *p -= rate * g;
                    }
                }
            }
            Optimizer::Adam(adam) => adam.step(params, grad, rates),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], rates: &RateGroups) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 / (1.0 - self.beta1.powi(self.t));
        let c2 = 1.0 / (1.0 - self.beta2.powi(self.t));
        let eps = self.epsilon as f32;
        for (range, rate) in rates.ranges(params.len()) {
            // Moments still advance for a frozen group.
            let step = (rate * c1) as f32;
            let c2 = c2 as f32;
            for i in range {
                let g = grad[i];
                let m = b1 * self.m[i] + (1.0 - b1) * g;
                let v = b2 * self.v[i] + (1.0 - b2) * g * g;
                self.m[i] = m;
                self.v[i] = v;
                if rate != 0.0 {
                    params[i] -= step * m / ((v * c2).sqrt() + eps);
                }
            }
        }
    }
}
