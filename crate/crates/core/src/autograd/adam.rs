use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates for every parameter of one store.
#[derive(Clone, Debug)]
pub struct Adam<R> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<R>>,
    second: Vec<Tensor<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(store: &ParamStore<R>, config: AdamConfig) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update from the gradients held in `store`.
    ///
    /// Gradients are left in place; the caller resets them.
    pub fn step(&mut self, store: &mut ParamStore<R>) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            if store.grad(id).shape() != self.first[id.index()].shape() {
                return Err(Error::invalid(format!("missing gradient for {}", store.name(id))));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (R::of(c.beta1), R::of(c.beta2));
        let bias1 = R::one() - R::of(c.beta1.powi(self.step as i32));
        let bias2 = R::one() - R::of(c.beta2.powi(self.step as i32));
        let (lr, eps) = (R::of(c.learning_rate), R::of(c.eps));
        for id in store.ids() {
            let grad = store.grad(id).data().to_vec();
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let value = store.value_mut(id).data_mut();
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = b1 * m[k] + (R::one() - b1) * g;
                v[k] = b2 * v[k] + (R::one() - b2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
