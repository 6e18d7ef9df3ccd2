use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor2>,
    pub v: Vec<Tensor2>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor2]) -> Self {
        let zeros = || params.iter().map(|p| Tensor2::zeros(p.rows(), p.cols())).collect();
        AdamState {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor2], grads: &[Tensor2]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam step with {} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "adam shapes disagree: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> Vec<Tensor2> {
        vec![Tensor2::column(&[v])]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor2::column(&[0.3, -1.0])];
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor2::zeros(2, 1)]).unwrap();
        assert_eq!(p[0].data(), &[0.3, -1.0]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &scalar(1.0)).unwrap();
        // reference: m_hat = g, v_hat = g^2, update = -lr * g / (|g| + eps)
        let expected = -0.001 * 1.0 / (1.0 + 1e-8);
        assert_abs_diff_eq!(p[0].data()[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn repeated_gradient_moves_monotonically() {
        let mut p = scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let mut prev = 1.0;
        for _ in 0..2 {
            adam.step(&mut p, &scalar(0.5)).unwrap();
            let now = p[0].data()[0];
            assert!(now < prev);
            prev = now;
        }
        // two steps with a constant gradient each move by ~lr
        assert_abs_diff_eq!(prev, 1.0 - 0.002, epsilon = 1e-7);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        assert!(adam.step(&mut p, &[Tensor2::zeros(2, 1)]).is_err());
        assert!(adam.step(&mut p, &[]).is_err());
    }
}
