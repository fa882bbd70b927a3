use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Bias-corrected adaptive moment estimation.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: HashMap<ParamId, Tensor<T>>,
    second: HashMap<ParamId, Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update with learning rate `lr` to every parameter that has
    /// a gradient. If any gradient is non-finite nothing is modified and the
    /// offending parameter is reported.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let mut ids: Vec<ParamId> = grads.params().map(|(id, _)| id).collect();
        ids.sort();
        for &id in &ids {
            if !grads.param(id).unwrap().all_finite() {
                return Err(TensorError::NonFiniteGradient(store.get(id).name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let step_size = T::from_f64(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
        let eps = T::from_f64(eps);
        for id in ids {
            let g = grads.param(id).unwrap();
            let shape = g.shape().to_vec();
            let m = self.first.entry(id).or_insert_with(|| Tensor::zeros(shape.clone()));
            let v = self.second.entry(id).or_insert_with(|| Tensor::zeros(shape));
            let p = store.value_mut(id);
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *pi -= step_size * *mi / ((*vi).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
