use serde::{Deserialize, Serialize};

use super::{Layer, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam over every parameter of one layer tree. Moment buffers are allocated
/// on the first step and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step<T: Scalar>(&mut self, layer: &mut dyn Layer<T>) {
        let mut params = layer.params_mut();
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to a different layer tree");
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = c.lr / bc1;
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let w = p.value[i].to_f64().unwrap();
                let g = p.grad[i].to_f64().unwrap() + c.weight_decay * w;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let denom = (v[i] / bc2).sqrt() + c.eps;
                p.value[i] = T::c(w - step_size * m[i] / denom);
                p.grad[i] = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Mode, Tensor};

    #[test]
    fn first_step_moves_by_lr() {
        let mut lin = Linear::<f64>::new(1, 1);
        lin.weight.value[0] = 1.0;
        lin.weight.grad[0] = 0.3;
        lin.bias.grad[0] = -2.0;
        let mut opt = Adam::new(AdamConfig { lr: 0.01, ..Default::default() });
        opt.step(&mut lin);
        assert!((lin.weight.value[0] - 0.99).abs() < 1e-9);
        assert!((lin.bias.value[0] - 0.01).abs() < 1e-9);
        assert_eq!(lin.weight.grad[0], 0.0);
    }

    #[test]
    fn fits_a_line() {
        let mut lin = Linear::<f64>::new(1, 1);
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() });
        let xs: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
        let x = Tensor::new([16, 1, 1, 1], xs.clone());
        let y: Vec<f64> = xs.iter().map(|v| 3.0 * v - 0.5).collect();
        for _ in 0..2000 {
            let out = lin.forward(&x, Mode::Train);
            let g: Vec<f64> = out.data().iter().zip(&y).map(|(o, t)| 2.0 * (o - t) / 16.0).collect();
            lin.backward(&Tensor::new([16, 1, 1, 1], g), true);
            opt.step(&mut lin);
        }
        assert!((lin.weight.value[0] - 3.0).abs() < 1e-3);
        assert!((lin.bias.value[0] + 0.5).abs() < 1e-3);
    }
}
