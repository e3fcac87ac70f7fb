//! First-order optimizers over [`ParamSet`]s.

use super::init::ParamSet;
use super::tensor::Tensor;

/// RMSProp with the usual decay 0.9 and epsilon 1e-8.
pub struct RmsProp {
    pub learning_rate: f64,
    rho: f64,
    eps: f64,
    cache: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, params: &ParamSet) -> Self {
        let cache = params.entries.iter().map(|e| Tensor::zeros(e.tensor.shape.clone())).collect();
        Self { learning_rate, rho: 0.9, eps: 1e-8, cache }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        for ((entry, grad), cache) in params.entries.iter_mut().zip(grads).zip(&mut self.cache) {
            for ((p, &g), v) in entry.tensor.data.iter_mut().zip(&grad.data).zip(&mut cache.data) {
                *v = self.rho * *v + (1.0 - self.rho) * g * g;
                *p -= self.learning_rate * g / (v.sqrt() + self.eps);
            }
        }
    }
}

/// Adam with the usual beta 0.9/0.999 and epsilon 1e-8.
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| -> Vec<Tensor> {
            p.entries.iter().map(|e| Tensor::zeros(e.tensor.shape.clone())).collect()
        };
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step_count += 1;
        let t = self.step_count as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        for (((entry, grad), m), v) in params.entries.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), mi), vi) in entry
                .tensor
                .data
                .iter_mut()
                .zip(&grad.data)
                .zip(&mut m.data)
                .zip(&mut v.data)
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
