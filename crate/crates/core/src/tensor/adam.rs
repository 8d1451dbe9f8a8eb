//! Adam with bias correction.

use super::array::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for one set of parameters.
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[Vec<usize>], config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One update over all parameter/gradient pairs. `lr = 0` leaves the
    /// parameters bit-identical. Non-finite gradients abort with a
    /// divergence error before any state is touched.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::invalid("adam: parameter/gradient count mismatch"));
        }
        for (p, g) in params.iter().zip(grads.iter()) {
            if p.shape != g.shape {
                return Err(Error::invalid("adam: gradient shape mismatch"));
            }
            if !g.all_finite() {
                return Err(Error::Diverged("non-finite gradient".into()));
            }
        }
        if lr == 0.0 {
            return Ok(());
        }
        self.step += 1;
        let b1 = T::from_f64(self.config.beta1);
        let b2 = T::from_f64(self.config.beta2);
        let one = T::one();
        let inv_bc1 = T::from_f64(1.0 / (1.0 - self.config.beta1.powi(self.step as i32)));
        let inv_bc2 = T::from_f64(1.0 / (1.0 - self.config.beta2.powi(self.step as i32)));
        let lr = T::from_f64(lr);
        let eps = T::from_f64(self.config.eps);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (one - b1) * gi;
                v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
                let m_hat = m.data[i] * inv_bc1;
                let v_hat = v.data[i] * inv_bc2;
                p.data[i] = p.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
