use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with the AMSGrad running maximum of the second moment.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamAmsgrad {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub v_max: Vec<Tensor>,
}

impl AdamAmsgrad {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Tensor> = shapes.into_iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros.clone(),
            v_max: zeros,
        }
    }

    /// Applies one update; `lrs[i]` is the step size for parameter `i`
    /// (`None` leaves it and its moments untouched).
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lrs: &[Option<f64>]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state size");
        assert_eq!(grads.len(), params.len(), "gradient count");
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2_sqrt = (1.0 - beta2.powi(t)).sqrt();
        for (i, p) in params.iter_mut().enumerate() {
            let Some(lr) = lrs[i] else { continue };
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let vm = self.v_max[i].data_mut();
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                vm[k] = vm[k].max(v[k]);
                let denom = vm[k].sqrt() / bc2_sqrt + eps;
                *x -= lr / bc1 * m[k] / denom;
            }
        }
    }
}
