use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn for_net(net: &Mlp) -> Self {
        Self::new(net.n_params())
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        assert_eq!(grads.len(), self.m.len(), "gradient does not match parameters");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn step_net(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) {
        let mut params = net.flat_params();
        self.update(&mut params, &grads.flat(), lr);
        net.set_flat_params(&params).expect("parameter count is fixed");
    }
}

/// Cosine decay from `lr0` at iteration 0 to 0 at iteration `total - 1`.
pub fn cosine_lr(lr0: f64, iteration: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr0;
    }
    let x = iteration.min(total - 1) as f64 / (total - 1) as f64;
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * x).cos())
}
