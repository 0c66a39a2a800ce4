//! Adam with bias correction over an ordered set of parameter tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Per-parameter first/second moment buffers plus the shared step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Sizes moment buffers to the given parameter list; `step` must later be
    /// called with tensors of the same shapes in the same order.
    pub fn new(cfg: AdamConfig, params: &[&Tensor]) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        AdamState {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    /// Applies one bias-corrected update, consuming each tensor's gradient.
    /// Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam state tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(Error::contract(format!(
                    "missing gradient on parameter {i}"
                )));
            }
            if p.len() != self.m[i].len() {
                return Err(Error::shape(
                    format!("adam parameter {i}"),
                    &[self.m[i].len()],
                    &[p.len()],
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.take_grad().expect("checked above");
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = p.data_mut();
            for j in 0..g.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_adam(g: &[f64], steps: usize, cfg: &AdamConfig, x0: &[f64]) -> Vec<f64> {
        // Independent re-derivation of the update rule for constant gradients.
        let mut x = x0.to_vec();
        let mut m = vec![0.0; g.len()];
        let mut v = vec![0.0; g.len()];
        for t in 1..=steps {
            for j in 0..g.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mh = m[j] / (1.0 - cfg.beta1.powi(t as i32));
                let vh = v[j] / (1.0 - cfg.beta2.powi(t as i32));
                x[j] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
        x
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut t = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = t.data().to_vec();
        let mut adam = AdamState::new(AdamConfig::default(), &[&t]);
        for _ in 0..5 {
            t.accumulate_grad(&[0.0, 0.0, 0.0]).unwrap();
            adam.step(&mut [&mut t]).unwrap();
        }
        assert_eq!(t.data(), before.as_slice());
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_matches_hand_oracle() {
        let cfg = AdamConfig::default();
        let g = [0.3, -1.2, 4.0];
        let x0 = [0.0, 1.0, -1.0];
        let expected = hand_adam(&g, 1, &cfg, &x0);

        let mut t = Tensor::new(vec![3], x0.to_vec()).unwrap();
        let mut adam = AdamState::new(cfg, &[&t]);
        t.accumulate_grad(&g).unwrap();
        adam.step(&mut [&mut t]).unwrap();
        for (a, e) in t.data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
        // With bias correction, the first step is -lr * g / (|g| + eps).
        for (j, (a, x)) in t.data().iter().zip(&x0).enumerate() {
            let direct = x - cfg.learning_rate * g[j] / (g[j].abs() + cfg.epsilon);
            assert!((a - direct).abs() < 1e-10, "{a} vs {direct}");
        }
    }

    #[test]
    fn two_steps_match_hand_oracle() {
        let cfg = AdamConfig::default();
        let g = [0.5, -0.25];
        let x0 = [2.0, 2.0];
        let expected = hand_adam(&g, 2, &cfg, &x0);

        let mut t = Tensor::new(vec![2], x0.to_vec()).unwrap();
        let mut adam = AdamState::new(cfg, &[&t]);
        for _ in 0..2 {
            t.accumulate_grad(&g).unwrap();
            adam.step(&mut [&mut t]).unwrap();
        }
        for (a, e) in t.data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut t = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &[&t]);
        let err = adam.step(&mut [&mut t]).unwrap_err();
        assert!(matches!(err, crate::error::Error::Contract(_)));
        assert_eq!(adam.step_count(), 0);
    }
}
